//! Homogeneous self-dual interior-point method for
//!
//! ```text
//! minimize c'x  subject to  A x = b,  x in K
//! ```
//!
//! with `K` a product of nonnegative orthants and PSD cones (svec layout),
//! and `A` of full row rank. Directions use Nesterov-Todd scaling and a
//! Mehrotra predictor-corrector.

use nalgebra::{DMatrix, DVector};

use super::cones::{identity, jordan, Block, Scaling};

const STEP_FRACTION: f64 = 0.99;
const MIN_STEP: f64 = 1e-8;
/// Give up once the best score has not improved for this many iterations.
const STALL_ITERS: usize = 25;

pub(crate) struct StdForm {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
}

pub(crate) struct IpmResult {
    pub status: IpmStatus,
    /// For `Optimal` and `MaxIter`: `x / tau` etc. For infeasibility: the
    /// raw certificate ray.
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub iterations: usize,
}

struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: DVector<f64>,
    ds: DVector<f64>,
    dy: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

struct Residuals {
    r1: DVector<f64>,
    r2: DVector<f64>,
    r3: f64,
    pres: f64,
    dres: f64,
    gap: f64,
}

/// Factorized normal matrix `A D A'`.
struct Normal {
    m: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Normal {
    fn new(mut m: DMatrix<f64>) -> Option<Self> {
        let k = m.nrows();
        if k == 0 {
            return Some(Self { m, chol: None });
        }
        let orig = m.clone();
        let scale = (0..k)
            .map(|i| m[(i, i)].abs())
            .fold(0.0, f64::max)
            .max(1e-300);
        let mut reg = 0.0;
        for _ in 0..12 {
            if let Some(ch) = m.clone().cholesky() {
                return Some(Self {
                    m: orig,
                    chol: Some(ch),
                });
            }
            reg = if reg == 0.0 {
                1e-14 * scale
            } else {
                reg * 100.0
            };
            m = orig.clone();
            for i in 0..k {
                m[(i, i)] += reg;
            }
        }
        None
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            None => DVector::zeros(0),
            Some(ch) => {
                let mut x = ch.solve(rhs);
                // one step of iterative refinement against the unregularized matrix
                let r = rhs - &self.m * &x;
                x += ch.solve(&r);
                x
            }
        }
    }
}

impl StdForm {
    fn nu(&self) -> f64 {
        self.blocks.iter().map(Block::degree).sum::<usize>() as f64
    }

    fn residuals(&self, it: &Iterate) -> Residuals {
        let (a, b, c) = (&self.a, &self.b, &self.c);
        let r1 = a * &it.x - b * it.tau;
        let r2 = a.transpose() * &it.y + &it.s - c * it.tau;
        let cx = c.dot(&it.x);
        let by = b.dot(&it.y);
        let r3 = cx - by + it.kappa;
        let pres = (a * &it.x / it.tau - b).norm() / (1.0 + b.norm());
        let dres = ((a.transpose() * &it.y + &it.s) / it.tau - c).norm() / (1.0 + c.norm());
        let (pobj, dobj) = (cx / it.tau, by / it.tau);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        Residuals {
            r1,
            r2,
            r3,
            pres,
            dres,
            gap,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        it: &Iterate,
        sc: &Scaling,
        normal: &Normal,
        dat: &DMatrix<f64>,
        res: &Residuals,
        eta: f64,
        dc: &DVector<f64>,
        dk: f64,
    ) -> Direction {
        let (a, b, c) = (&self.a, &self.b, &self.c);
        let g = sc.w_t(&sc.lambda_div(dc));
        let g_plus = &g + sc.d(&res.r2) * eta;
        let p = normal.solve(&(-&res.r1 * eta - a * &g_plus));
        let dc_vec = sc.d(c);
        let q = normal.solve(&(a * &dc_vec + b));
        let dx_p = &g_plus + dat * &p;
        let dx_q = dat * &q - &dc_vec;
        let num = -eta * res.r3 - c.dot(&dx_p) + b.dot(&p) - dk / it.tau;
        let den = c.dot(&dx_q) - b.dot(&q) - it.kappa / it.tau;
        let dtau = num / den;
        let dy = &p + &q * dtau;
        let dx = &dx_p + &dx_q * dtau;
        let ds = -&res.r2 * eta - a.transpose() * &dy + c * dtau;
        let dkappa = (dk - it.kappa * dtau) / it.tau;
        Direction {
            dx,
            ds,
            dy,
            dtau,
            dkappa,
        }
    }

    fn max_step(&self, it: &Iterate, sc: &Scaling, d: &Direction) -> f64 {
        let mut alpha = sc.max_step(&sc.w_inv_t(&d.dx), f64::INFINITY);
        alpha = sc.max_step(&sc.w(&d.ds), alpha);
        if d.dtau < 0.0 {
            alpha = alpha.min(-it.tau / d.dtau);
        }
        if d.dkappa < 0.0 {
            alpha = alpha.min(-it.kappa / d.dkappa);
        }
        alpha
    }

    /// Solve with the standard-form residuals as the stopping measure.
    pub fn solve(&self, tol: f64, max_iter: usize) -> IpmResult {
        self.solve_scored(tol, max_iter, |_, _, res| res)
    }

    /// `score(x, y, std_residual)` sees the normalized iterate and decides
    /// both termination (`<= tol`) and which iterate is kept when the run
    /// stalls.
    pub fn solve_scored<F>(&self, tol: f64, max_iter: usize, mut score: F) -> IpmResult
    where
        F: FnMut(&DVector<f64>, &DVector<f64>, f64) -> f64,
    {
        let n = self.c.len();
        let k = self.b.len();
        let e = identity(&self.blocks, n);
        let nu = self.nu();
        let mut it = Iterate {
            x: e.clone(),
            s: e.clone(),
            y: DVector::zeros(k),
            tau: 1.0,
            kappa: 1.0,
        };
        let mut best: Option<(f64, usize, DVector<f64>, DVector<f64>)> = None;
        let mut iterations = 0;

        for iter in 0..=max_iter {
            iterations = iter;
            let res = self.residuals(&it);
            let x = &it.x / it.tau;
            let y = &it.y / it.tau;
            let sc = score(&x, &y, res.pres.max(res.dres).max(res.gap));
            if sc <= tol {
                return IpmResult {
                    status: IpmStatus::Optimal,
                    x,
                    y,
                    iterations: iter,
                };
            }
            if best.as_ref().is_none_or(|b| sc < b.0) {
                best = Some((sc, iter, x, y));
            } else if best.as_ref().is_some_and(|b| iter - b.1 >= STALL_ITERS) {
                break;
            }
            if iter == max_iter {
                break;
            }
            let by = self.b.dot(&it.y);
            if by > 0.0 && (self.a.transpose() * &it.y + &it.s).norm() <= tol * by {
                return IpmResult {
                    status: IpmStatus::PrimalInfeasible,
                    x: it.x.clone(),
                    y: &it.y / by,
                    iterations: iter,
                };
            }
            let cx = self.c.dot(&it.x);
            if cx < 0.0 && (&self.a * &it.x).norm() <= tol * (-cx) {
                return IpmResult {
                    status: IpmStatus::DualInfeasible,
                    x: &it.x / (-cx),
                    y: it.y.clone(),
                    iterations: iter,
                };
            }

            let Some(sc) = Scaling::new(&self.blocks, &it.x, &it.s) else {
                break;
            };
            // A D A'
            let mut dat = DMatrix::zeros(n, k);
            for r in 0..k {
                let row = self.a.row(r).transpose();
                dat.set_column(r, &sc.d(&row));
            }
            let Some(normal) = Normal::new(&self.a * &dat) else {
                break;
            };
            let lambda = sc.lambda(n);
            let lam_sq = jordan(&self.blocks, &lambda, &lambda);
            let mu = (it.x.dot(&it.s) + it.tau * it.kappa) / (nu + 1.0);

            // predictor
            let aff = self.direction(
                &it,
                &sc,
                &normal,
                &dat,
                &res,
                1.0,
                &(-&lam_sq),
                -it.tau * it.kappa,
            );
            let alpha_aff = self.max_step(&it, &sc, &aff).min(1.0);
            let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

            // corrector
            let cross = jordan(&self.blocks, &sc.w_inv_t(&aff.dx), &sc.w(&aff.ds));
            let dc = -&lam_sq + &e * (sigma * mu) - cross;
            let dk = -it.tau * it.kappa + sigma * mu - aff.dtau * aff.dkappa;
            let mut dir = self.direction(&it, &sc, &normal, &dat, &res, 1.0 - sigma, &dc, dk);
            let mut alpha = (STEP_FRACTION * self.max_step(&it, &sc, &dir)).min(1.0);

            if alpha < MIN_STEP {
                // pure centering
                let dc = -&lam_sq + &e * mu;
                let dk = -it.tau * it.kappa + mu;
                dir = self.direction(&it, &sc, &normal, &dat, &res, 0.0, &dc, dk);
                alpha = (STEP_FRACTION * self.max_step(&it, &sc, &dir)).min(1.0);
                if alpha < MIN_STEP {
                    break;
                }
            }
            it.x += &dir.dx * alpha;
            it.s += &dir.ds * alpha;
            it.y += &dir.dy * alpha;
            it.tau += dir.dtau * alpha;
            it.kappa += dir.dkappa * alpha;
            if !(it.tau.is_finite() && it.kappa.is_finite()) || it.x.iter().any(|v| !v.is_finite())
            {
                break;
            }
            // keep the embedding well scaled
            let scale = it.tau.max(it.kappa);
            if !(1e-8..=1e8).contains(&scale) {
                it.x /= scale;
                it.s /= scale;
                it.y /= scale;
                it.tau /= scale;
                it.kappa /= scale;
            }
        }
        match best {
            Some((_, _, x, y)) => IpmResult {
                status: IpmStatus::MaxIter,
                x,
                y,
                iterations,
            },
            None => IpmResult {
                status: IpmStatus::MaxIter,
                x: &it.x / it.tau,
                y: &it.y / it.tau,
                iterations,
            },
        }
    }
}
