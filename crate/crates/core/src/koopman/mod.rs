//! EDMD and gEDMD approximations of the Lie derivative.
//!
//! With `B = (1/n) sum psi psi^T`, `A = (1/n) sum phi(y) psi^T` and
//! `C = (1/n) sum y psi^T`, the fitted operators are
//!
//! * `K = A B^+` (Koopman matrix, least squares on the snapshot pairs),
//! * `L = (K - Theta) / tau` (finite-difference Lie derivative),
//! * `G = C B^+` (generator fitted from sampled Lie derivatives).
//!
//! Row `j` of `L` (or `G`) holds the coefficients in `psi` of the image of
//! `phi_j`, where `Theta` embeds `phi` in `psi`.

mod convergence;
mod moments;
mod pinv;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convergence::{
    convergence_study, exact_koopman_matrix, loglog_slope, ConvergenceReference, ConvergenceRow,
    ConvergenceSetup, ConvergenceStudy,
};
pub use moments::{
    analytic_circle_moments, circle_moment, moment_matrices, moment_matrices_at, MomentMatrices,
    MomentSource, CHUNK_ROWS,
};
use pinv::pinv_parts;
pub use pinv::{pinv, pinv_with_report, PinvReport, DEFAULT_REL_TOL};

use crate::polybasis::{inclusion_matrix, Dictionary, PolyError, PolyInBasis};
use crate::snapshots::{SnapshotError, SnapshotKind, SnapshotSet};
use crate::systems::SystemError;

#[derive(Debug, Error)]
pub enum KoopmanError {
    #[error("snapshot set is empty")]
    Empty,
    #[error("expected {expected:?} snapshots, got {got:?}")]
    KindMismatch {
        expected: SnapshotKind,
        got: SnapshotKind,
    },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("operator has no {0} matrix")]
    Missing(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Which approximate Lie derivative to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LieKind {
    Edmd,
    Gedmd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdReport {
    /// Singular values of the data matrix `Psi` (`sqrt(n)` times those of `B`'s square root).
    pub data_singular_values: Vec<f64>,
    /// Singular values of `B`.
    pub gram_singular_values: Vec<f64>,
    pub rank: usize,
    pub rel_tol: f64,
    pub cutoff: f64,
}

/// Fitted operators. `k`/`l` come from koopman data, `g` from generator data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdmdOperators {
    pub phi: Dictionary,
    pub psi: Dictionary,
    pub tau: f64,
    pub n: usize,
    #[serde(with = "matrix_rows")]
    pub theta: DMatrix<f64>,
    #[serde(with = "matrix_rows::opt", default)]
    pub k: Option<DMatrix<f64>>,
    #[serde(with = "matrix_rows::opt", default)]
    pub l: Option<DMatrix<f64>>,
    #[serde(with = "matrix_rows::opt", default)]
    pub g: Option<DMatrix<f64>>,
    /// `B`, kept for the divergence indicator.
    #[serde(with = "matrix_rows")]
    pub gram: DMatrix<f64>,
    pub svd_report: SvdReport,
}

impl EdmdOperators {
    /// Operators from precomputed moments.
    pub fn from_moments(
        mm: &MomentMatrices,
        phi: &Dictionary,
        psi: &Dictionary,
        rel_tol: f64,
    ) -> Result<Self, KoopmanError> {
        let theta = inclusion_matrix(phi, psi)?;
        let (b_pinv, null, rep) = pinv_parts(&mm.b, rel_tol)?;
        let (k, l) = match (&mm.a, &mm.d) {
            (Some(a), d) => {
                let k = a * &b_pinv;
                // (K - Theta)/tau loses about log10(1/tau) digits to
                // cancellation; the difference moments avoid it.
                let l = match d {
                    Some(d) => d * &b_pinv - &theta * &null / mm.tau,
                    None => (&k - &theta) / mm.tau,
                };
                (Some(k), Some(l))
            }
            (None, _) => (None, None),
        };
        let g = mm.c.as_ref().map(|c| c * &b_pinv);
        let n = mm.n as f64;
        Ok(Self {
            phi: phi.clone(),
            psi: psi.clone(),
            tau: mm.tau,
            n: mm.n,
            theta,
            k,
            l,
            g,
            gram: mm.b.clone(),
            svd_report: SvdReport {
                data_singular_values: rep.singular_values.iter().map(|s| (n * s).sqrt()).collect(),
                gram_singular_values: rep.singular_values,
                rank: rep.rank,
                rel_tol,
                cutoff: rep.cutoff,
            },
        })
    }

    pub fn lie_matrix(&self, which: LieKind) -> Result<&DMatrix<f64>, KoopmanError> {
        match which {
            LieKind::Edmd => self.l.as_ref().ok_or(KoopmanError::Missing("EDMD Lie")),
            LieKind::Gedmd => self
                .g
                .as_ref()
                .ok_or(KoopmanError::Missing("gEDMD generator")),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("operators serialize")
    }
}

pub fn fit_edmd(
    set: &SnapshotSet,
    phi: &Dictionary,
    psi: &Dictionary,
) -> Result<EdmdOperators, KoopmanError> {
    fit_edmd_with(set, phi, psi, DEFAULT_REL_TOL)
}

pub fn fit_edmd_with(
    set: &SnapshotSet,
    phi: &Dictionary,
    psi: &Dictionary,
    rel_tol: f64,
) -> Result<EdmdOperators, KoopmanError> {
    if set.kind() != SnapshotKind::Koopman {
        return Err(KoopmanError::KindMismatch {
            expected: SnapshotKind::Koopman,
            got: set.kind(),
        });
    }
    let mm = moment_matrices(set, phi, psi)?;
    EdmdOperators::from_moments(&mm, phi, psi, rel_tol)
}

pub fn fit_gedmd(
    set: &SnapshotSet,
    phi: &Dictionary,
    psi: &Dictionary,
) -> Result<EdmdOperators, KoopmanError> {
    fit_gedmd_with(set, phi, psi, DEFAULT_REL_TOL)
}

pub fn fit_gedmd_with(
    set: &SnapshotSet,
    phi: &Dictionary,
    psi: &Dictionary,
    rel_tol: f64,
) -> Result<EdmdOperators, KoopmanError> {
    if set.kind() != SnapshotKind::Generator {
        return Err(KoopmanError::KindMismatch {
            expected: SnapshotKind::Generator,
            got: set.kind(),
        });
    }
    let mm = moment_matrices(set, phi, psi)?;
    EdmdOperators::from_moments(&mm, phi, psi, rel_tol)
}

/// Approximate Lie derivative of `p = c . phi`, as `c^T L` (or `c^T G`) over `psi`.
pub fn apply_lie(
    ops: &EdmdOperators,
    which: LieKind,
    p: &PolyInBasis,
) -> Result<PolyInBasis, KoopmanError> {
    if p.dictionary != ops.phi {
        return Err(KoopmanError::Dimension(
            "polynomial is not written over phi".into(),
        ));
    }
    let mat = ops.lie_matrix(which)?;
    Ok(PolyInBasis::new(
        ops.psi.clone(),
        row_times(&p.coeffs, mat),
    )?)
}

fn row_times(c: &[f64], mat: &DMatrix<f64>) -> Vec<f64> {
    (0..mat.ncols())
        .map(|j| c.iter().enumerate().map(|(i, ci)| ci * mat[(i, j)]).sum())
        .collect()
}

/// The polynomial `c^T Theta (B B^+ - I) psi` for `p = c . phi`. The
/// finite-difference Lie image of `p` stays bounded as `tau -> 0` exactly
/// where it vanishes.
pub fn divergence_indicator(
    b: &DMatrix<f64>,
    phi: &Dictionary,
    psi: &Dictionary,
    p: &PolyInBasis,
    rel_tol: f64,
) -> Result<PolyInBasis, KoopmanError> {
    if p.dictionary != *phi {
        return Err(KoopmanError::Dimension(
            "polynomial is not written over phi".into(),
        ));
    }
    let theta = inclusion_matrix(phi, psi)?;
    let m = psi.len();
    if b.shape() != (m, m) {
        return Err(KoopmanError::Dimension(format!(
            "B is {:?}, psi has {m} elements",
            b.shape()
        )));
    }
    let proj = b * pinv(b, rel_tol)? - DMatrix::<f64>::identity(m, m);
    let ct = row_times(&p.coeffs, &theta);
    Ok(PolyInBasis::new(psi.clone(), row_times(&ct, &proj))?)
}

impl EdmdOperators {
    pub fn divergence_indicator(&self, p: &PolyInBasis) -> Result<PolyInBasis, KoopmanError> {
        divergence_indicator(&self.gram, &self.phi, &self.psi, p, self.svd_report.rel_tol)
    }
}

/// Dense matrices as JSON arrays of rows.
pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_row_iterator(r, c, rows.into_iter().flatten()))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        from_rows(Vec::<Vec<f64>>::deserialize(d)?).map_err(D::Error::custom)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
            m.as_ref().map(to_rows).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> Result<Option<DMatrix<f64>>, D::Error> {
            Option::<Vec<Vec<f64>>>::deserialize(d)?
                .map(from_rows)
                .transpose()
                .map_err(D::Error::custom)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polybasis::{total_degree_dictionary, Family};

    fn identity_data() -> SnapshotSet {
        let x = vec![0.1, -0.4, 0.9, 0.3, -0.7];
        SnapshotSet::new(1, 1, 1.0, SnapshotKind::Koopman, vec![0.0; 5], x.clone(), x).unwrap()
    }

    #[test]
    fn identity_map_gives_theta() {
        let d = total_degree_dictionary(Family::Monomial, 1, 3);
        let ops = fit_edmd(&identity_data(), &d, &d).unwrap();
        let eye = DMatrix::<f64>::identity(4, 4);
        assert!((ops.k.as_ref().unwrap() - &eye).norm() < 1e-10);
        assert!(ops.l.as_ref().unwrap().norm() < 1e-10);
        assert!(ops.g.is_none());
        assert_eq!(ops.svd_report.rank, 4);
    }

    #[test]
    fn kind_checks() {
        let d = total_degree_dictionary(Family::Monomial, 1, 1);
        assert!(matches!(
            fit_gedmd(&identity_data(), &d, &d),
            Err(KoopmanError::KindMismatch { .. })
        ));
        let ops = fit_edmd(&identity_data(), &d, &d).unwrap();
        let p = PolyInBasis::new(d, vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            apply_lie(&ops, LieKind::Gedmd, &p),
            Err(KoopmanError::Missing(_))
        ));
    }

    #[test]
    fn zero_generator_data() {
        let phi = total_degree_dictionary(Family::Monomial, 1, 2);
        let x = vec![0.1, 0.5, -0.3, 0.8];
        let set = SnapshotSet::new(
            1,
            3,
            1.0,
            SnapshotKind::Generator,
            vec![0.0; 4],
            x,
            vec![0.0; 12],
        )
        .unwrap();
        let ops = fit_gedmd(&set, &phi, &phi).unwrap();
        assert_eq!(ops.g.as_ref().unwrap(), &DMatrix::zeros(3, 3));
        let zero = PolyInBasis::zero(phi.clone());
        assert!(apply_lie(&ops, LieKind::Gedmd, &zero)
            .unwrap()
            .coeffs
            .iter()
            .all(|c| *c == 0.0));
    }

    #[test]
    fn phi_must_sit_inside_psi() {
        let phi = total_degree_dictionary(Family::Monomial, 1, 3);
        let psi = total_degree_dictionary(Family::Monomial, 1, 2);
        assert!(matches!(
            fit_edmd(&identity_data(), &phi, &psi),
            Err(KoopmanError::Poly(PolyError::SmallNotContained(_)))
        ));
    }

    #[test]
    fn indicator_vanishes_for_invertible_b() {
        let d = total_degree_dictionary(Family::Monomial, 1, 2);
        let ops = fit_edmd(&identity_data(), &d, &d).unwrap();
        let p = PolyInBasis::new(d, vec![1.0, -2.0, 0.5]).unwrap();
        assert!(ops.divergence_indicator(&p).unwrap().max_abs_coeff() < 1e-10);
    }

    #[test]
    fn json_export_round_trips() {
        let d = total_degree_dictionary(Family::Monomial, 1, 2);
        let ops = fit_edmd(&identity_data(), &d, &d).unwrap();
        let back: EdmdOperators = serde_json::from_str(&ops.to_json()).unwrap();
        assert_eq!(back, ops);
    }
}
