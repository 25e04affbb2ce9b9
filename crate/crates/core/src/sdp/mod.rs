//! Small dense conic programs:
//!
//! ```text
//! minimize c'z  subject to  A z = b,  z in K_1 x ... x K_p
//! ```
//!
//! where each `K_i` is free, a nonnegative orthant, or a PSD cone stored in
//! svec layout (see [`cones`]). Free variables are eliminated up front;
//! the remaining problem goes to a homogeneous self-dual interior-point
//! method, so infeasible and unbounded problems get certificates rather
//! than an iteration-limit verdict.

pub mod cones;
mod ipm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cones::{smat, svec, svec_index, svec_len, SQRT2};

use crate::linalg::thin_svd;
use cones::{min_cone_value, Block};
use ipm::{IpmStatus, StdForm};

/// Relative singular-value cutoff used when eliminating free variables and
/// dependent equality rows.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Cone {
    Free {
        dim: usize,
    },
    Nonneg {
        dim: usize,
    },
    /// Symmetric `side x side` matrix, `side (side + 1) / 2` svec entries.
    Psd {
        side: usize,
    },
}

impl Cone {
    pub fn len(&self) -> usize {
        match *self {
            Cone::Free { dim } | Cone::Nonneg { dim } => dim,
            Cone::Psd { side } => svec_len(side),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Conic program with sparse data. JSON layout:
/// `{"cones": [...], "objective": [[j, c_j], ...], "a": [[i, j, a_ij], ...], "b": [...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdpProblem {
    pub cones: Vec<Cone>,
    pub objective: Vec<(usize, f64)>,
    pub a: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
}

impl SdpProblem {
    pub fn new(cones: Vec<Cone>) -> Self {
        Self {
            cones,
            objective: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cones.iter().map(Cone::len).sum()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    /// First variable index of each cone.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.cones.len());
        let mut acc = 0;
        for c in &self.cones {
            off.push(acc);
            acc += c.len();
        }
        off
    }

    pub fn add_objective(&mut self, var: usize, coef: f64) {
        self.objective.push((var, coef));
    }

    /// Appends the row `sum coef_j z_j = rhs`; returns its index.
    pub fn add_row(&mut self, entries: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.b.len();
        self.a.extend(
            entries
                .iter()
                .filter(|e| e.1 != 0.0)
                .map(|&(j, v)| (r, j, v)),
        );
        self.b.push(rhs);
        r
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let n = self.num_vars();
        let m = self.num_rows();
        let mut nonzero = vec![false; m];
        for &(i, j, v) in &self.a {
            if i >= m || j >= n {
                return Err(SdpError::Invalid(format!(
                    "entry ({i}, {j}) outside {m} x {n}"
                )));
            }
            if !v.is_finite() {
                return Err(SdpError::Invalid(format!("entry ({i}, {j}) is not finite")));
            }
            if v != 0.0 {
                nonzero[i] = true;
            }
        }
        if let Some(i) = nonzero.iter().position(|z| !z) {
            return Err(SdpError::Invalid(format!("row {i} of A is all zero")));
        }
        for &(j, v) in &self.objective {
            if j >= n || !v.is_finite() {
                return Err(SdpError::Invalid(format!("bad objective entry ({j}, {v})")));
            }
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::Invalid("b is not finite".into()));
        }
        Ok(())
    }

    pub fn dense_a(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.num_rows(), self.num_vars());
        for &(i, j, v) in &self.a {
            a[(i, j)] += v;
        }
        a
    }

    pub fn dense_c(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.num_vars());
        for &(j, v) in &self.objective {
            c[j] += v;
        }
        c
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("problem serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SdpError> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    /// Symmetric matrix of PSD cone `cone` inside `z`.
    pub fn psd_block(&self, z: &[f64], cone: usize) -> Option<DMatrix<f64>> {
        match self.cones.get(cone)? {
            Cone::Psd { side } => {
                let off = self.offsets()[cone];
                Some(smat(&z[off..off + svec_len(*side)], *side))
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

/// Residuals recomputed from the original problem data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `||A z - b|| / (1 + ||b||)`.
    pub primal_feas: f64,
    /// `||s_free|| + ||min(0, s_cone)||` over `(1 + ||c||)`, with `s = c - A'y`.
    pub dual_feas: f64,
    /// `|c'z - b'y| / (1 + |c'z| + |b'y|)`.
    pub gap: f64,
    /// Distance of `z` outside its cones (most negative eigenvalue, clipped at 0).
    pub cone_violation: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.primal_feas
            .max(self.dual_feas)
            .max(self.gap)
            .max(self.cone_violation)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// For `Infeasible`, `y` is a Farkas ray (`b'y = 1`, `-A'y` in the dual
/// cone); for `Unbounded`, `z` is an improving ray (`c'z = -1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub kkt: KktReport,
    pub iterations: usize,
}

/// Independent check of a candidate solution against the problem data.
pub fn verify_kkt(p: &SdpProblem, sol: &SdpSolution) -> KktReport {
    KktData::new(p).report(&sol.z, &sol.y)
}

/// Dense copy of the problem data for repeated KKT evaluation.
struct KktData<'a> {
    p: &'a SdpProblem,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    offs: Vec<usize>,
}

impl<'a> KktData<'a> {
    fn new(p: &'a SdpProblem) -> Self {
        Self {
            p,
            a: p.dense_a(),
            b: DVector::from_column_slice(&p.b),
            c: p.dense_c(),
            offs: p.offsets(),
        }
    }

    fn report(&self, z: &[f64], y: &[f64]) -> KktReport {
        let (a, b, c) = (&self.a, &self.b, &self.c);
        let z = DVector::from_column_slice(z);
        let y = DVector::from_column_slice(y);
        let primal_feas = (a * &z - b).norm() / (1.0 + b.norm());
        let s = c - a.transpose() * &y;
        let mut dual_sq = 0.0;
        let mut cone_violation: f64 = 0.0;
        for (cone, &off) in self.p.cones.iter().zip(&self.offs) {
            let n = cone.len();
            match *cone {
                Cone::Free { .. } => {
                    dual_sq += s.rows(off, n).norm_squared();
                }
                Cone::Nonneg { .. } => {
                    for i in off..off + n {
                        dual_sq += s[i].min(0.0).powi(2);
                        cone_violation = cone_violation.max(-z[i]);
                    }
                }
                Cone::Psd { side } => {
                    let blk = [Block::Psd { offset: 0, side }];
                    let sv = min_cone_value(&blk, s.rows(off, n).as_slice());
                    dual_sq += sv.min(0.0).powi(2);
                    let zv = min_cone_value(&blk, z.rows(off, n).as_slice());
                    cone_violation = cone_violation.max(-zv);
                }
            }
        }
        let pobj = c.dot(&z);
        let dobj = b.dot(&y);
        KktReport {
            primal_feas,
            dual_feas: dual_sq.sqrt() / (1.0 + c.norm()),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
            cone_violation: cone_violation.max(0.0),
        }
    }
}

/// Result of eliminating free variables and dependent rows.
struct Presolved {
    std: StdForm,
    /// Original indices of the conic variables, in standard-form order.
    conic_idx: Vec<usize>,
    free_idx: Vec<usize>,
    /// `z_f = zf_const + zf_lin * x`.
    zf_const: DVector<f64>,
    zf_lin: DMatrix<f64>,
    /// `y = y_const + y_lin * y_std`.
    y_const: DVector<f64>,
    y_lin: DMatrix<f64>,
    /// Objective moves along the null space of the free columns.
    unbounded_direction: bool,
}

enum PresolveOutcome {
    Ready(Box<Presolved>),
    Inconsistent,
}

/// Thin SVD `M = U diag(s) V'` truncated at
/// `RANK_TOL * max(s_max, scale) * max(rows, cols)`. `scale` guards against
/// matrices that are zero up to rounding.
fn truncated_svd(m: &DMatrix<f64>, scale: f64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return (
            DMatrix::zeros(r, 0),
            DVector::zeros(0),
            DMatrix::zeros(c, 0),
        );
    }
    let svd = thin_svd(m).expect("finite matrix");
    let smax = svd.s.max();
    let cut = RANK_TOL * smax.max(scale) * r.max(c) as f64;
    let rank = svd.s.iter().take_while(|&&v| v > cut && v > 0.0).count();
    (
        svd.u.columns(0, rank).into_owned(),
        svd.s.rows(0, rank).into_owned(),
        svd.v.columns(0, rank).into_owned(),
    )
}

fn presolve(p: &SdpProblem) -> PresolveOutcome {
    let a = p.dense_a();
    let b = DVector::from_column_slice(&p.b);
    let c = p.dense_c();
    let m = p.num_rows();
    let offs = p.offsets();
    let mut free_idx = Vec::new();
    let mut conic_idx = Vec::new();
    let mut blocks = Vec::new();
    for (cone, &off) in p.cones.iter().zip(&offs) {
        match *cone {
            Cone::Free { dim } => free_idx.extend(off..off + dim),
            Cone::Nonneg { dim } => {
                if dim > 0 {
                    blocks.push(Block::Nonneg {
                        offset: conic_idx.len(),
                        len: dim,
                    });
                    conic_idx.extend(off..off + dim);
                }
            }
            Cone::Psd { side } => {
                if side > 0 {
                    blocks.push(Block::Psd {
                        offset: conic_idx.len(),
                        side,
                    });
                    conic_idx.extend(off..off + svec_len(side));
                }
            }
        }
    }
    let af = a.select_columns(&free_idx);
    let ac = a.select_columns(&conic_idx);
    let cf = c.select_rows(&free_idx);
    let cc = c.select_rows(&conic_idx);

    // A_f = U1 S1 V1'
    let (u1, s1, v1) = truncated_svd(&af, 0.0);
    let s1inv = s1.map(|v| 1.0 / v);
    // z_f = V1 S1^{-1} U1' (b - A_c x)
    let pinv_af = &v1 * DMatrix::from_diagonal(&s1inv) * u1.transpose();
    let zf_const = &pinv_af * &b;
    let zf_lin = -(&pinv_af * &ac);
    // y part fixed by the free columns: U1 S1^{-1} V1' c_f
    let y_free = &u1 * DMatrix::from_diagonal(&s1inv) * v1.transpose() * &cf;
    let unbounded_direction = {
        let resid = &cf - &v1 * (v1.transpose() * &cf);
        resid.norm() > 1e-9 * (1.0 + cf.norm())
    };
    let c_std = &cc - ac.transpose() * &y_free;

    // rows orthogonal to range(A_f)
    let ar = &ac - &u1 * (u1.transpose() * &ac);
    let br = &b - &u1 * (u1.transpose() * &b);
    let (u2, s2, v2) = truncated_svd(&ar, ac.norm());
    let consistency = (&br - &u2 * (u2.transpose() * &br)).norm();
    if consistency > 1e-8 * (1.0 + b.norm()) {
        return PresolveOutcome::Inconsistent;
    }
    // V2' x = S2^{-1} U2' b_r
    let s2inv = DMatrix::from_diagonal(&s2.map(|v| 1.0 / v));
    let t = &s2inv * u2.transpose() * (DMatrix::<f64>::identity(m, m) - &u1 * u1.transpose());
    let b_std = &s2inv * u2.transpose() * &br;
    let a_std = v2.transpose();

    PresolveOutcome::Ready(Box::new(Presolved {
        std: StdForm {
            a: a_std,
            b: b_std,
            c: c_std,
            blocks,
        },
        conic_idx,
        free_idx,
        zf_const,
        zf_lin,
        y_const: y_free,
        y_lin: t.transpose(),
        unbounded_direction,
    }))
}

impl Presolved {
    fn lift_z(&self, n: usize, x: &DVector<f64>) -> Vec<f64> {
        let mut z = vec![0.0; n];
        for (k, &i) in self.conic_idx.iter().enumerate() {
            z[i] = x[k];
        }
        let zf = &self.zf_const + &self.zf_lin * x;
        for (k, &i) in self.free_idx.iter().enumerate() {
            z[i] = zf[k];
        }
        z
    }

    fn lift_y(&self, y: &DVector<f64>) -> Vec<f64> {
        (&self.y_const + &self.y_lin * y).iter().copied().collect()
    }
}

fn assemble(
    p: &SdpProblem,
    status: SdpStatus,
    z: Vec<f64>,
    y: Vec<f64>,
    iterations: usize,
) -> SdpSolution {
    let c = p.dense_c();
    let objective = c.iter().zip(&z).map(|(a, b)| a * b).sum();
    let dual_objective = p.b.iter().zip(&y).map(|(a, b)| a * b).sum();
    let mut sol = SdpSolution {
        status,
        z,
        y,
        objective,
        dual_objective,
        kkt: KktReport {
            primal_feas: f64::NAN,
            dual_feas: f64::NAN,
            gap: f64::NAN,
            cone_violation: f64::NAN,
        },
        iterations,
    };
    sol.kkt = verify_kkt(p, &sol);
    sol
}

pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    p.validate()?;
    let n = p.num_vars();
    let pre = match presolve(p) {
        PresolveOutcome::Inconsistent => {
            return Ok(assemble(
                p,
                SdpStatus::Infeasible,
                vec![0.0; n],
                vec![0.0; p.num_rows()],
                0,
            ));
        }
        PresolveOutcome::Ready(pre) => pre,
    };

    if pre.unbounded_direction {
        // The objective can move freely along the free variables; only
        // feasibility remains to be decided.
        let feas = StdForm {
            a: pre.std.a.clone(),
            b: pre.std.b.clone(),
            c: DVector::zeros(pre.std.c.len()),
            blocks: pre.std.blocks.clone(),
        };
        let r = feas.solve(opts.tol, opts.max_iter);
        let status = match r.status {
            IpmStatus::Optimal => SdpStatus::Unbounded,
            IpmStatus::PrimalInfeasible => SdpStatus::Infeasible,
            _ => SdpStatus::MaxIter,
        };
        let z = pre.lift_z(n, &r.x);
        return Ok(assemble(p, status, z, pre.lift_y(&r.y), r.iterations));
    }

    // Termination and the fallback iterate are judged on the original data,
    // since lifting through the presolve can amplify reduced residuals.
    let kkt = KktData::new(p);
    let r = pre.std.solve_scored(opts.tol, opts.max_iter, |x, y, _| {
        kkt.report(&pre.lift_z(n, x), &pre.lift_y(y)).max()
    });
    let sol = match r.status {
        IpmStatus::Optimal | IpmStatus::MaxIter => {
            let z = pre.lift_z(n, &r.x);
            let y = pre.lift_y(&r.y);
            let mut sol = assemble(p, SdpStatus::MaxIter, z, y, r.iterations);
            if sol.kkt.passes(opts.tol) {
                sol.status = SdpStatus::Optimal;
            }
            sol
        }
        IpmStatus::PrimalInfeasible => {
            // Farkas ray in original coordinates: only the row part matters.
            let y: Vec<f64> = (&pre.y_lin * &r.y).iter().copied().collect();
            assemble(p, SdpStatus::Infeasible, vec![0.0; n], y, r.iterations)
        }
        IpmStatus::DualInfeasible => {
            let mut z = vec![0.0; n];
            for (k, &i) in pre.conic_idx.iter().enumerate() {
                z[i] = r.x[k];
            }
            let zf = &pre.zf_lin * &r.x;
            for (k, &i) in pre.free_idx.iter().enumerate() {
                z[i] = zf[k];
            }
            assemble(
                p,
                SdpStatus::Unbounded,
                z,
                vec![0.0; p.num_rows()],
                r.iterations,
            )
        }
    };
    Ok(sol)
}
