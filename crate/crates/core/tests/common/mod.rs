#![allow(dead_code)]

use koopsos::sdp::{svec, Cone, SdpProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u: f64 = rng.random::<f64>().max(1e-300);
    let v: f64 = rng.random::<f64>();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn random_pd(rng: &mut ChaCha8Rng, side: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(side, side, |_, _| gauss(rng));
    &g * g.transpose() / side as f64 + DMatrix::identity(side, side) * 0.5
}

/// Point in the interior of `cones`; free entries are arbitrary.
fn interior_point(rng: &mut ChaCha8Rng, cones: &[Cone]) -> Vec<f64> {
    let mut z = Vec::new();
    for c in cones {
        match *c {
            Cone::Free { dim } => z.extend((0..dim).map(|_| gauss(rng))),
            Cone::Nonneg { dim } => z.extend((0..dim).map(|_| 0.5 + rng.random::<f64>())),
            Cone::Psd { side } => z.extend(svec(&random_pd(rng, side))),
        }
    }
    z
}

/// Dual-cone interior point with zero free part.
fn dual_interior(rng: &mut ChaCha8Rng, cones: &[Cone]) -> Vec<f64> {
    let mut s = interior_point(rng, cones);
    let mut off = 0;
    for c in cones {
        if let Cone::Free { dim } = *c {
            s[off..off + dim].iter_mut().for_each(|v| *v = 0.0);
        }
        off += c.len();
    }
    s
}

fn random_cones(rng: &mut ChaCha8Rng, max_side: usize, with_free: bool) -> Vec<Cone> {
    let mut cones = Vec::new();
    let blocks = rng.random_range(1..=3);
    for _ in 0..blocks {
        cones.push(Cone::Psd {
            side: rng.random_range(1..=max_side),
        });
    }
    if rng.random_bool(0.5) {
        cones.push(Cone::Nonneg {
            dim: rng.random_range(1..=6),
        });
    }
    if with_free && rng.random_bool(0.5) {
        cones.push(Cone::Free {
            dim: rng.random_range(1..=3),
        });
    }
    cones
}

fn dense_problem(
    cones: Vec<Cone>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DVector<f64>,
) -> SdpProblem {
    let mut p = SdpProblem::new(cones);
    for (j, v) in c.iter().enumerate() {
        if *v != 0.0 {
            p.add_objective(j, *v);
        }
    }
    for i in 0..a.nrows() {
        let row: Vec<(usize, f64)> = (0..a.ncols()).map(|j| (j, a[(i, j)])).collect();
        p.add_row(&row, b[i]);
    }
    p
}

/// Primal and dual strictly feasible instance: `b = A z0`, `c = A'y0 + s0`
/// with `z0`, `s0` interior.
pub fn strictly_feasible(seed: u64, max_side: usize) -> SdpProblem {
    let mut rng = rng(seed);
    let cones = random_cones(&mut rng, max_side, true);
    let n: usize = cones.iter().map(Cone::len).sum();
    let free: usize = cones
        .iter()
        .map(|c| if let Cone::Free { dim } = c { *dim } else { 0 })
        .sum();
    let m = rng.random_range(free.max(1)..=(n / 2).max(free + 1).min(n));
    let a = DMatrix::from_fn(m, n, |_, _| gauss(&mut rng));
    let z0 = DVector::from_vec(interior_point(&mut rng, &cones));
    let s0 = DVector::from_vec(dual_interior(&mut rng, &cones));
    let y0 = DVector::from_fn(m, |_, _| gauss(&mut rng));
    let b = &a * z0;
    let c = a.transpose() * y0 + s0;
    dense_problem(cones, &a, &b, &c)
}

/// Instance with a Farkas certificate: `A'y0 = -s0`, `s0` interior,
/// `b'y0 = 1`. No free cones.
pub fn certified_infeasible(seed: u64, max_side: usize) -> SdpProblem {
    let mut rng = rng(seed);
    let cones = random_cones(&mut rng, max_side, false);
    let n: usize = cones.iter().map(Cone::len).sum();
    let m = rng.random_range(1..=(n / 2).max(1));
    let mut a = DMatrix::from_fn(m, n, |_, _| gauss(&mut rng));
    let s0 = DVector::from_vec(dual_interior(&mut rng, &cones));
    let mut y0 = DVector::from_fn(m, |_, _| gauss(&mut rng));
    y0[m - 1] = 1.0 + rng.random::<f64>();
    // fix the last row so that A'y0 = -s0
    let mut rest = -&s0;
    for i in 0..m - 1 {
        rest -= a.row(i).transpose() * y0[i];
    }
    a.set_row(m - 1, &(rest / y0[m - 1]).transpose());
    let mut b = DVector::from_fn(m, |_, _| gauss(&mut rng));
    let by = b.dot(&y0);
    // shift b along y0 until b'y0 = 1
    b += &y0 * ((1.0 - by) / y0.norm_squared());
    let c = DVector::from_fn(n, |_, _| gauss(&mut rng));
    dense_problem(cones, &a, &b, &c)
}

// ------------------------------------------------------------ snapshot sets

use koopsos::{Basis, Dictionary, SnapshotKind, SnapshotSet};

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// A random snapshot set with its dictionaries. Roughly one set in four
/// lies on the unit circle, which makes `psi` linearly dependent on the
/// data once it contains `1, x1^2, x2^2`.
pub struct RandomCase {
    pub set: SnapshotSet,
    pub phi: Dictionary,
    pub psi: Dictionary,
}

pub fn random_case(seed: u64) -> RandomCase {
    let mut r = rng(seed);
    let d = if seed % 4 == 3 {
        2
    } else {
        1 + (r.random::<u32>() % 2) as usize
    };
    let on_circle = d == 2 && seed % 4 == 3;
    let basis = if r.random::<bool>() && !on_circle {
        Basis::chebyshev_on(vec![[-1.0, 1.0]; d])
    } else {
        Basis::monomial(d)
    };
    let deg_phi = 1 + r.random::<u32>() % 2;
    let deg_psi = deg_phi + 1 + r.random::<u32>() % 2;
    let phi = Dictionary::total_degree(basis.clone(), deg_phi);
    let psi = Dictionary::total_degree(basis, deg_psi);
    let n = 200 + (r.random::<u32>() % 800) as usize;
    let tau = uniform(&mut r, 0.01, 1.0);
    let generator = !on_circle && r.random::<f64>() < 0.3;
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::new();
    for _ in 0..n {
        let pt: Vec<f64> = if on_circle {
            let t = uniform(&mut r, 0.0, std::f64::consts::TAU);
            vec![t.cos(), t.sin()]
        } else {
            (0..d).map(|_| uniform(&mut r, -1.0, 1.0)).collect()
        };
        if generator {
            y.extend((0..phi.len()).map(|_| gauss(&mut r)));
        } else if on_circle {
            // rotation keeps the data on the circle
            let (c, s) = (tau.cos(), tau.sin());
            y.extend([c * pt[0] - s * pt[1], s * pt[0] + c * pt[1]]);
        } else {
            y.extend(
                pt.iter()
                    .map(|v| v + tau * (0.5 * v - v * v * v) + 0.1 * tau * gauss(&mut r)),
            );
        }
        x.extend(pt);
    }
    let (kind, q) = if generator {
        (SnapshotKind::Generator, phi.len())
    } else {
        (SnapshotKind::Koopman, d)
    };
    let t = (0..n).map(|i| i as f64 * tau).collect();
    let set = SnapshotSet::new(d, q, tau, kind, t, x, y).expect("valid snapshots");
    RandomCase { set, phi, psi }
}

/// Columns `f(x_i)` as a matrix.
pub fn data_matrix(rows: usize, n: usize, f: impl Fn(usize) -> Vec<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, n);
    for i in 0..n {
        m.set_column(i, &DVector::from_vec(f(i)));
    }
    m
}

/// Pseudoinverse from nalgebra's SVD with a relative cutoff.
pub fn svd_pinv(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(rel * smax).expect("svd with vectors")
}

/// Pseudoinverse of a symmetric PSD matrix from its eigendecomposition.
pub fn sym_pinv(m: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let e = m.clone().symmetric_eigen();
    let cut = rel * e.eigenvalues.amax();
    let inv = e.eigenvalues.map(|l| if l > cut { 1.0 / l } else { 0.0 });
    &e.eigenvectors * DMatrix::from_diagonal(&inv) * e.eigenvectors.transpose()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Relative Frobenius errors of the fitted `K`, `L` (koopman data) or `G`
/// (generator data) against two oracles: the data-matrix form `Phi Psi^+`
/// and the moment form `A B^+`, `D B^+ + Theta (B B^+ - I) / tau`, `C B^+`,
/// each with an independently computed pseudoinverse.
#[derive(Debug, Default)]
pub struct IdentityErrors {
    pub k: f64,
    pub l: f64,
    pub g: f64,
}

impl IdentityErrors {
    pub fn max(&self) -> f64 {
        self.k.max(self.l).max(self.g)
    }
}

pub fn identity_errors(case: &RandomCase) -> IdentityErrors {
    let RandomCase { set, phi, psi } = case;
    let n = set.len();
    let tau = set.tau();
    let (m, l) = (psi.len(), phi.len());
    let psi_x = data_matrix(m, n, |i| psi.evaluate(set.x(i)).unwrap());
    let phi_x = data_matrix(l, n, |i| phi.evaluate(set.x(i)).unwrap());
    let theta = DMatrix::from_fn(l, m, |i, j| {
        if phi.indices()[i] == psi.indices()[j] {
            1.0
        } else {
            0.0
        }
    });
    let psi_pinv = svd_pinv(&psi_x, 1e-7);
    let b = &psi_x * psi_x.transpose() / n as f64;
    let b_pinv = sym_pinv(&b, 1e-10);
    let proj = &b * &b_pinv - DMatrix::identity(m, m);
    let mut out = IdentityErrors::default();
    match set.kind() {
        SnapshotKind::Koopman => {
            let ops = koopsos::fit_edmd(set, phi, psi).unwrap();
            let phi_y = data_matrix(l, n, |i| phi.evaluate(set.y(i)).unwrap());
            let a = &phi_y * psi_x.transpose() / n as f64;
            let dm = (&phi_y - &phi_x) * psi_x.transpose() / (n as f64 * tau);
            let k_data = &phi_y * &psi_pinv;
            let l_data = (&k_data - &theta) / tau;
            let k_mom = &a * &b_pinv;
            let l_mom = &dm * &b_pinv + &theta * &proj / tau;
            let k = ops.k.as_ref().unwrap();
            let lie = ops.l.as_ref().unwrap();
            out.k = rel_err(k, &k_data)
                .max(rel_err(k, &k_mom))
                .max(rel_err(&k_mom, &k_data));
            out.l = rel_err(lie, &l_data)
                .max(rel_err(lie, &l_mom))
                .max(rel_err(&l_mom, &l_data));
        }
        SnapshotKind::Generator => {
            let ops = koopsos::fit_gedmd(set, phi, psi).unwrap();
            let lam = data_matrix(l, n, |i| set.y(i).to_vec());
            let c = &lam * psi_x.transpose() / n as f64;
            let g_data = &lam * &psi_pinv;
            let g_mom = &c * &b_pinv;
            let g = ops.g.as_ref().unwrap();
            out.g = rel_err(g, &g_data)
                .max(rel_err(g, &g_mom))
                .max(rel_err(&g_mom, &g_data));
        }
    }
    out
}
