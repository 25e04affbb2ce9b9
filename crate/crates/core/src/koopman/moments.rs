//! Moment matrices of a snapshot set:
//!
//! ```text
//! A = (1/n) sum phi(y_i) psi(x_i)^T           (koopman data)
//! B = (1/n) sum psi(x_i) psi(x_i)^T
//! C = (1/n) sum y_i psi(x_i)^T                (generator data)
//! D = (1/n) sum (phi(y_i) - phi(x_i)) psi(x_i)^T / tau
//! ```
//!
//! Sums are Kahan-compensated within fixed chunks of rows; chunk results are
//! combined in row order, so the output does not depend on the thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{matrix_rows, KoopmanError};
use crate::polybasis::{Dictionary, Family, PolyError};
use crate::snapshots::{SnapshotKind, SnapshotSet};

pub const CHUNK_ROWS: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentSource {
    Empirical { data_hash: String },
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrices {
    pub n: usize,
    pub tau: f64,
    #[serde(with = "matrix_rows::opt")]
    pub a: Option<DMatrix<f64>>,
    #[serde(with = "matrix_rows")]
    pub b: DMatrix<f64>,
    #[serde(with = "matrix_rows::opt")]
    pub c: Option<DMatrix<f64>>,
    #[serde(with = "matrix_rows::opt")]
    pub d: Option<DMatrix<f64>>,
    pub source: MomentSource,
}

impl MomentMatrices {
    /// Moments for sub-dictionaries `phi` of `big_phi` and `psi` of
    /// `big_psi`, read off without touching the data again.
    pub fn restrict(
        &self,
        big_phi: &Dictionary,
        big_psi: &Dictionary,
        phi: &Dictionary,
        psi: &Dictionary,
    ) -> Result<MomentMatrices, KoopmanError> {
        if phi.basis() != big_phi.basis() || psi.basis() != big_psi.basis() {
            return Err(PolyError::BasisMismatch("restriction changes the basis".into()).into());
        }
        let pos = |small: &Dictionary, big: &Dictionary| -> Result<Vec<usize>, KoopmanError> {
            small
                .indices()
                .iter()
                .map(|idx| {
                    big.position(idx)
                        .ok_or_else(|| PolyError::SmallNotContained(idx.clone()).into())
                })
                .collect()
        };
        let rows = pos(phi, big_phi)?;
        let cols = pos(psi, big_psi)?;
        let pick = |m: &DMatrix<f64>, r: &[usize]| {
            DMatrix::from_fn(r.len(), cols.len(), |i, j| m[(r[i], cols[j])])
        };
        Ok(MomentMatrices {
            n: self.n,
            tau: self.tau,
            a: self.a.as_ref().map(|a| pick(a, &rows)),
            b: pick(&self.b, &cols),
            c: self.c.as_ref().map(|c| pick(c, &rows)),
            d: self.d.as_ref().map(|d| pick(d, &rows)),
            source: self.source.clone(),
        })
    }
}

#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn merge(&mut self, other: &Kahan) {
        self.add(other.sum);
        self.add(-other.comp);
    }
}

/// Running sums over a range of rows.
#[derive(Clone)]
struct Partial {
    rows: usize,
    /// Upper triangle of `sum psi psi^T`, row-major packed.
    b: Vec<Kahan>,
    /// `l x m`: `phi(y) psi^T` or `y psi^T`.
    a: Vec<Kahan>,
    /// `l x m`: `(phi(y) - phi(x)) psi^T` (koopman only).
    d: Vec<Kahan>,
}

impl Partial {
    fn new(l: usize, m: usize, koopman: bool) -> Self {
        Self {
            rows: 0,
            b: vec![Kahan::default(); m * (m + 1) / 2],
            a: vec![Kahan::default(); l * m],
            d: if koopman {
                vec![Kahan::default(); l * m]
            } else {
                vec![]
            },
        }
    }

    fn merge(&mut self, other: &Partial) {
        self.rows += other.rows;
        for (s, o) in self.b.iter_mut().zip(&other.b) {
            s.merge(o);
        }
        for (s, o) in self.a.iter_mut().zip(&other.a) {
            s.merge(o);
        }
        for (s, o) in self.d.iter_mut().zip(&other.d) {
            s.merge(o);
        }
    }
}

struct Layout<'a> {
    set: &'a SnapshotSet,
    phi: &'a Dictionary,
    psi: &'a Dictionary,
    /// Position of each `phi_j` inside `psi`.
    phi_in_psi: Vec<usize>,
}

impl Layout<'_> {
    fn accumulate(&self, range: std::ops::Range<usize>) -> Result<Partial, PolyError> {
        let (l, m) = (self.phi.len(), self.psi.len());
        let koopman = self.set.kind() == SnapshotKind::Koopman;
        let mut part = Partial::new(l, m, koopman);
        let mut psi_ev = self.psi.evaluator();
        let mut phi_ev = self.phi.evaluator();
        let mut psi_x = vec![0.0; m];
        let mut phi_y = vec![0.0; l];
        let tau = self.set.tau();
        for i in range {
            psi_ev.evaluate_into(self.set.x(i), &mut psi_x)?;
            let mut idx = 0;
            for (r, &pr) in psi_x.iter().enumerate() {
                for &pc in &psi_x[r..] {
                    part.b[idx].add(pr * pc);
                    idx += 1;
                }
            }
            if koopman {
                phi_ev.evaluate_into(self.set.y(i), &mut phi_y)?;
            } else {
                phi_y.copy_from_slice(self.set.y(i));
            }
            for (row, &pj) in part.a.chunks_exact_mut(m).zip(&phi_y) {
                for (acc, p) in row.iter_mut().zip(&psi_x) {
                    acc.add(pj * p);
                }
            }
            if koopman {
                for j in 0..l {
                    let diff = (phi_y[j] - psi_x[self.phi_in_psi[j]]) / tau;
                    let row = &mut part.d[j * m..(j + 1) * m];
                    for (acc, p) in row.iter_mut().zip(&psi_x) {
                        acc.add(diff * p);
                    }
                }
            }
            part.rows += 1;
        }
        Ok(part)
    }

    fn finish(&self, part: &Partial) -> MomentMatrices {
        let (l, m) = (self.phi.len(), self.psi.len());
        let n = part.rows as f64;
        let mut b = DMatrix::zeros(m, m);
        let mut idx = 0;
        for r in 0..m {
            for c in r..m {
                let v = part.b[idx].sum / n;
                b[(r, c)] = v;
                b[(c, r)] = v;
                idx += 1;
            }
        }
        let rows = |v: &[Kahan]| DMatrix::from_fn(l, m, |j, k| v[j * m + k].sum / n);
        let (a, c, d) = match self.set.kind() {
            SnapshotKind::Koopman => (Some(rows(&part.a)), None, Some(rows(&part.d))),
            SnapshotKind::Generator => (None, Some(rows(&part.a)), None),
        };
        MomentMatrices {
            n: part.rows,
            tau: self.set.tau(),
            a,
            b,
            c,
            d,
            source: MomentSource::Empirical {
                data_hash: self.set.data_hash(),
            },
        }
    }
}

pub(crate) fn check_dictionaries(
    set: &SnapshotSet,
    phi: &Dictionary,
    psi: &Dictionary,
) -> Result<Vec<usize>, KoopmanError> {
    if phi.basis() != psi.basis() {
        return Err(PolyError::BasisMismatch("phi and psi use different bases".into()).into());
    }
    if phi.dim() != set.state_dim() {
        return Err(KoopmanError::Dimension(format!(
            "dictionaries act on dimension {}, snapshots have {}",
            phi.dim(),
            set.state_dim()
        )));
    }
    if set.kind() == SnapshotKind::Generator && set.obs_dim() != phi.len() {
        return Err(KoopmanError::Dimension(format!(
            "generator snapshots carry {} values per row, phi has {} elements",
            set.obs_dim(),
            phi.len()
        )));
    }
    phi.indices()
        .iter()
        .map(|idx| {
            psi.position(idx)
                .ok_or_else(|| PolyError::SmallNotContained(idx.clone()).into())
        })
        .collect()
}

/// Moment matrices over all rows.
pub fn moment_matrices(
    set: &SnapshotSet,
    phi: &Dictionary,
    psi: &Dictionary,
) -> Result<MomentMatrices, KoopmanError> {
    let mut out = moment_matrices_at(set, phi, psi, &[set.len()])?;
    Ok(out.pop().expect("one checkpoint"))
}

/// Moment matrices of the first `n` rows for each `n` in `checkpoints`
/// (strictly increasing), from a single pass over the data.
pub fn moment_matrices_at(
    set: &SnapshotSet,
    phi: &Dictionary,
    psi: &Dictionary,
    checkpoints: &[usize],
) -> Result<Vec<MomentMatrices>, KoopmanError> {
    if set.is_empty() {
        return Err(KoopmanError::Empty);
    }
    if checkpoints.is_empty()
        || checkpoints[0] == 0
        || checkpoints.windows(2).any(|w| w[0] >= w[1])
        || *checkpoints.last().unwrap() > set.len()
    {
        return Err(KoopmanError::Invalid(format!(
            "checkpoints {checkpoints:?} must be increasing within 1..={}",
            set.len()
        )));
    }
    let phi_in_psi = check_dictionaries(set, phi, psi)?;
    let layout = Layout {
        set,
        phi,
        psi,
        phi_in_psi,
    };
    let mut ranges = Vec::new();
    let mut start = 0;
    for &cp in checkpoints {
        while start < cp {
            let end = (start + CHUNK_ROWS).min(cp);
            ranges.push(start..end);
            start = end;
        }
    }
    let parts: Vec<Partial> = ranges
        .par_iter()
        .map(|r| layout.accumulate(r.clone()))
        .collect::<Result<_, _>>()?;
    let mut total = Partial::new(phi.len(), psi.len(), set.kind() == SnapshotKind::Koopman);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut cp_iter = checkpoints.iter().peekable();
    for (r, part) in ranges.iter().zip(&parts) {
        total.merge(part);
        if cp_iter.peek() == Some(&&r.end) {
            out.push(layout.finish(&total));
            cp_iter.next();
        }
    }
    Ok(out)
}

/// `(1/2pi) int_0^{2pi} cos^p t sin^q t dt`.
pub fn circle_moment(p: u32, q: u32) -> f64 {
    if p % 2 == 1 || q % 2 == 1 {
        return 0.0;
    }
    let dfact = |k: i64| -> f64 {
        let mut v = 1.0;
        let mut j = k;
        while j > 1 {
            v *= j as f64;
            j -= 2;
        }
        v
    };
    dfact(p as i64 - 1) * dfact(q as i64 - 1) / dfact((p + q) as i64)
}

/// Exact `B` for the uniform measure on the unit circle; monomials in two
/// variables only.
pub fn analytic_circle_moments(psi: &Dictionary) -> Result<MomentMatrices, KoopmanError> {
    if psi.family() != Family::Monomial || psi.dim() != 2 {
        return Err(KoopmanError::Unsupported(
            "circle moments need a two-variable monomial dictionary".into(),
        ));
    }
    let idx = psi.indices();
    let b = DMatrix::from_fn(psi.len(), psi.len(), |i, j| {
        let e = idx[i].add(&idx[j]);
        circle_moment(e.exponents()[0], e.exponents()[1])
    });
    Ok(MomentMatrices {
        n: 0,
        tau: 0.0,
        a: None,
        b,
        c: None,
        d: None,
        source: MomentSource::Analytic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polybasis::{total_degree_dictionary, Basis, MultiIndex};

    #[test]
    fn circle_moment_values() {
        assert_eq!(circle_moment(0, 0), 1.0);
        assert_eq!(circle_moment(2, 0), 0.5);
        assert_eq!(circle_moment(2, 2), 0.125);
        assert_eq!(circle_moment(4, 0), 0.375);
        assert_eq!(circle_moment(1, 1), 0.0);
    }

    #[test]
    fn circle_b_against_trapezoid() {
        let psi = Dictionary::new(
            Basis::monomial(2),
            [[0, 0], [2, 0], [1, 1], [0, 2]]
                .iter()
                .map(|e| MultiIndex::new(e.to_vec()))
                .collect(),
        )
        .unwrap();
        let b = analytic_circle_moments(&psi).unwrap().b;
        // trapezoid rule with 10^4 nodes, exact for trigonometric polynomials
        let n = 10_000;
        let mut quad = DMatrix::zeros(4, 4);
        for k in 0..n {
            let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let v = psi.evaluate(&[t.cos(), t.sin()]).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    quad[(i, j)] += v[i] * v[j] / n as f64;
                }
            }
        }
        assert!((&b - &quad).norm() < 1e-6);
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[
                8.0, 4.0, 0.0, 4.0, 4.0, 3.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 4.0, 1.0, 0.0, 3.0,
            ],
        ) / 8.0;
        assert!((&b - &expect).norm() < 1e-15);

        let lin = Dictionary::new(
            Basis::monomial(2),
            vec![MultiIndex::new(vec![1, 0]), MultiIndex::new(vec![0, 1])],
        )
        .unwrap();
        assert_eq!(
            analytic_circle_moments(&lin).unwrap().b,
            DMatrix::identity(2, 2) * 0.5
        );
        let one = total_degree_dictionary(Family::Monomial, 2, 0);
        assert_eq!(
            analytic_circle_moments(&one).unwrap().b,
            DMatrix::from_element(1, 1, 1.0)
        );
        let cheb = total_degree_dictionary(Family::Chebyshev, 2, 2);
        assert!(analytic_circle_moments(&cheb).is_err());
    }

    #[test]
    fn single_snapshot_constant_dictionary() {
        let set = SnapshotSet::new(
            1,
            1,
            1.0,
            SnapshotKind::Koopman,
            vec![0.0],
            vec![0.3],
            vec![0.7],
        )
        .unwrap();
        let one = total_degree_dictionary(Family::Monomial, 1, 0);
        let mm = moment_matrices(&set, &one, &one).unwrap();
        assert_eq!(mm.b, DMatrix::from_element(1, 1, 1.0));
        assert_eq!(mm.d.unwrap(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn checkpoints_match_prefix_sets() {
        let n = 10_000;
        let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x: Vec<f64> = (0..n)
            .map(|i| ((i * 7919) % 1000) as f64 / 1000.0)
            .collect();
        let y: Vec<f64> = x.iter().map(|v| v * (1.0 - v) * 3.0).collect();
        let set = SnapshotSet::new(1, 1, 1.0, SnapshotKind::Koopman, t, x, y).unwrap();
        let phi = total_degree_dictionary(Family::Monomial, 1, 2);
        let psi = total_degree_dictionary(Family::Monomial, 1, 4);
        let cps = [100, 5000, 10_000];
        let all = moment_matrices_at(&set, &phi, &psi, &cps).unwrap();
        for (cp, mm) in cps.iter().zip(&all) {
            let direct = moment_matrices(&set.prefix(*cp).unwrap(), &phi, &psi).unwrap();
            assert_eq!(mm.n, *cp);
            assert!((&mm.b - &direct.b).norm() <= 1e-15 * direct.b.norm());
            assert!((mm.a.as_ref().unwrap() - direct.a.as_ref().unwrap()).norm() <= 1e-15);
        }
        assert!(moment_matrices_at(&set, &phi, &psi, &[10, 10]).is_err());
    }
}
