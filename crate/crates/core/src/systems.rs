//! Example dynamical systems: simulators, exact generators and snapshot
//! sampling.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64`; uniform
//! variates are built from the top 53 bits of `next_u64`, so a seed fixes
//! the stream on every platform.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::polybasis::{Basis, Dictionary, Poly, PolyError, PolyInBasis};
use crate::snapshots::{SnapshotError, SnapshotKind, SnapshotSet};

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("{system} does not support {op}")]
    WrongKind {
        system: &'static str,
        op: &'static str,
    },
    #[error("state {0} lies outside the invariant interval [0, 1]")]
    OutsideInvariant(f64),
    #[error("state has dimension {got}, system expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeKind {
    Discrete,
    Continuous,
}

fn default_mu() -> f64 {
    0.1
}

fn default_lambda_max() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// `(x, y) -> (0.3 x, -x + y/2 + 7 x^2 / 18)`.
    #[serde(rename = "map_lyap_2d")]
    MapLyap2D,
    /// `x'' - mu (1 - x^2) x' + x = 0` as a first-order system.
    VanDerPol {
        #[serde(default = "default_mu")]
        mu: f64,
    },
    /// `x -> lambda x (1 - x)` with `lambda ~ U[0, lambda_max]` drawn afresh
    /// each step, or pinned to `forced_lambda`.
    StochasticLogistic {
        #[serde(default = "default_lambda_max")]
        lambda_max: f64,
        #[serde(default)]
        forced_lambda: Option<f64>,
    },
    /// `x' = -y + x (1 - r^2)`, `y' = x + y (1 - r^2)`; limit cycle `r = 1`.
    CircularOrbit,
    /// `x -> A x`, rows of `A` given.
    LinearMap { matrix: Vec<Vec<f64>> },
}

impl SystemSpec {
    pub fn van_der_pol() -> Self {
        SystemSpec::VanDerPol { mu: 0.1 }
    }

    pub fn logistic() -> Self {
        SystemSpec::StochasticLogistic {
            lambda_max: 4.0,
            forced_lambda: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::MapLyap2D => "map_lyap_2d",
            SystemSpec::VanDerPol { .. } => "van_der_pol",
            SystemSpec::StochasticLogistic { .. } => "stochastic_logistic",
            SystemSpec::CircularOrbit => "circular_orbit",
            SystemSpec::LinearMap { .. } => "linear_map",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemSpec::MapLyap2D | SystemSpec::VanDerPol { .. } | SystemSpec::CircularOrbit => 2,
            SystemSpec::StochasticLogistic { .. } => 1,
            SystemSpec::LinearMap { matrix } => matrix.len(),
        }
    }

    pub fn time_kind(&self) -> TimeKind {
        match self {
            SystemSpec::VanDerPol { .. } | SystemSpec::CircularOrbit => TimeKind::Continuous,
            _ => TimeKind::Discrete,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            SystemSpec::StochasticLogistic {
                forced_lambda: None,
                ..
            }
        )
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), SystemError> {
        if x.len() != self.dim() {
            return Err(SystemError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// One step of a deterministic map (a logistic map counts when its
    /// `lambda` is forced).
    pub fn step_map(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        self.check_dim(x)?;
        match self {
            SystemSpec::MapLyap2D => Ok(vec![
                0.3 * x[0],
                -x[0] + 0.5 * x[1] + 7.0 / 18.0 * x[0] * x[0],
            ]),
            SystemSpec::LinearMap { matrix } => Ok(matrix
                .iter()
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect()),
            SystemSpec::StochasticLogistic {
                forced_lambda: Some(l),
                ..
            } => Ok(vec![l * x[0] * (1.0 - x[0])]),
            _ => Err(SystemError::WrongKind {
                system: self.name(),
                op: "step_map",
            }),
        }
    }

    /// One random step of the logistic map.
    pub fn step_stochastic(
        &self,
        x: &[f64],
        rng: &mut impl RngCore,
    ) -> Result<Vec<f64>, SystemError> {
        self.check_dim(x)?;
        match self {
            SystemSpec::StochasticLogistic {
                lambda_max,
                forced_lambda,
            } => {
                if !(0.0..=1.0).contains(&x[0]) {
                    return Err(SystemError::OutsideInvariant(x[0]));
                }
                let lambda = match forced_lambda {
                    Some(l) => *l,
                    None => lambda_max * unit_f64(rng),
                };
                Ok(vec![lambda * x[0] * (1.0 - x[0])])
            }
            _ => Err(SystemError::WrongKind {
                system: self.name(),
                op: "step_stochastic",
            }),
        }
    }

    /// Right-hand side of a continuous-time system.
    pub fn vector_field(&self, x: &[f64], out: &mut [f64]) -> Result<(), SystemError> {
        self.check_dim(x)?;
        match self {
            SystemSpec::VanDerPol { mu } => {
                out[0] = x[1];
                out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
            }
            SystemSpec::CircularOrbit => {
                let s = 1.0 - x[0] * x[0] - x[1] * x[1];
                out[0] = -x[1] + x[0] * s;
                out[1] = x[0] + x[1] * s;
            }
            _ => {
                return Err(SystemError::WrongKind {
                    system: self.name(),
                    op: "vector_field",
                })
            }
        }
        Ok(())
    }

    /// Classical fourth-order Runge-Kutta step of size `tau`.
    pub fn rk4_step(&self, x: &[f64], tau: f64) -> Result<Vec<f64>, SystemError> {
        let d = self.dim();
        let mut k1 = vec![0.0; d];
        let mut k2 = vec![0.0; d];
        let mut k3 = vec![0.0; d];
        let mut k4 = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        self.vector_field(x, &mut k1)?;
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * tau * k1[i];
        }
        self.vector_field(&tmp, &mut k2)?;
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * tau * k2[i];
        }
        self.vector_field(&tmp, &mut k3)?;
        for i in 0..d {
            tmp[i] = x[i] + tau * k3[i];
        }
        self.vector_field(&tmp, &mut k4)?;
        Ok((0..d)
            .map(|i| x[i] + tau / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    /// Fixed-step RK4 trajectory with `n_steps + 1` states.
    pub fn integrate_ode(
        &self,
        x0: &[f64],
        tau: f64,
        n_steps: usize,
    ) -> Result<Trajectory, SystemError> {
        self.check_dim(x0)?;
        if self.time_kind() != TimeKind::Continuous {
            return Err(SystemError::WrongKind {
                system: self.name(),
                op: "integrate_ode",
            });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SystemError::Unsupported(format!("step size {tau}")));
        }
        let d = self.dim();
        let mut states = Vec::with_capacity((n_steps + 1) * d);
        states.extend_from_slice(x0);
        let mut x = x0.to_vec();
        for step in 1..=n_steps {
            x = self.rk4_step(&x, tau)?;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(SystemError::NonFinite { step });
            }
            states.extend_from_slice(&x);
        }
        Ok(Trajectory {
            dim: d,
            tau,
            states,
        })
    }

    /// Components of the vector field or map as polynomials in `basis`.
    fn component_polys(&self, basis: &Basis) -> Result<Vec<Poly>, SystemError> {
        let b = basis.clone();
        let polys = match self {
            SystemSpec::MapLyap2D => vec![
                Poly::from_monomials(b.clone(), &[(vec![1, 0], 0.3)]),
                Poly::from_monomials(
                    b,
                    &[
                        (vec![1, 0], -1.0),
                        (vec![0, 1], 0.5),
                        (vec![2, 0], 7.0 / 18.0),
                    ],
                ),
            ],
            SystemSpec::VanDerPol { mu } => vec![
                Poly::from_monomials(b.clone(), &[(vec![0, 1], 1.0)]),
                Poly::from_monomials(
                    b,
                    &[(vec![0, 1], *mu), (vec![2, 1], -*mu), (vec![1, 0], -1.0)],
                ),
            ],
            SystemSpec::CircularOrbit => vec![
                Poly::from_monomials(
                    b.clone(),
                    &[
                        (vec![0, 1], -1.0),
                        (vec![1, 0], 1.0),
                        (vec![3, 0], -1.0),
                        (vec![1, 2], -1.0),
                    ],
                ),
                Poly::from_monomials(
                    b,
                    &[
                        (vec![1, 0], 1.0),
                        (vec![0, 1], 1.0),
                        (vec![2, 1], -1.0),
                        (vec![0, 3], -1.0),
                    ],
                ),
            ],
            SystemSpec::LinearMap { matrix } => {
                let d = matrix.len();
                matrix
                    .iter()
                    .map(|row| {
                        let terms: Vec<(Vec<u32>, f64)> = row
                            .iter()
                            .enumerate()
                            .map(|(k, a)| {
                                let mut e = vec![0; d];
                                e[k] = 1;
                                (e, *a)
                            })
                            .collect();
                        Poly::from_monomials(b.clone(), &terms)
                    })
                    .collect()
            }
            SystemSpec::StochasticLogistic { .. } => {
                return Err(SystemError::WrongKind {
                    system: self.name(),
                    op: "component_polys",
                })
            }
        };
        Ok(polys)
    }

    /// Exact Lie derivative of a sparse polynomial.
    pub fn exact_lie_poly(&self, p: &Poly) -> Result<Poly, SystemError> {
        if p.basis().dim() != self.dim() {
            return Err(SystemError::Dimension {
                expected: self.dim(),
                got: p.basis().dim(),
            });
        }
        let basis = p.basis().clone();
        match self {
            SystemSpec::VanDerPol { .. } | SystemSpec::CircularOrbit => {
                let f = self.component_polys(&basis)?;
                let mut out = Poly::zero(basis);
                for (k, fk) in f.iter().enumerate() {
                    out = out.add(&fk.mul(&p.derivative(k))?)?;
                }
                Ok(out)
            }
            SystemSpec::MapLyap2D | SystemSpec::LinearMap { .. } => {
                let f = self.component_polys(&basis)?;
                Ok(p.compose(&f)?.sub(p)?)
            }
            SystemSpec::StochasticLogistic {
                lambda_max,
                forced_lambda,
            } => {
                let moments = |k: usize| match forced_lambda {
                    Some(l) => l.powi(k as i32),
                    None => lambda_max.powi(k as i32) / (k as f64 + 1.0),
                };
                Ok(logistic_expectation(p, moments)?.sub(p)?)
            }
        }
    }

    /// Exact Lie derivative coefficients of `p` in `target`.
    pub fn exact_lie_apply(
        &self,
        p: &PolyInBasis,
        target: &Dictionary,
    ) -> Result<PolyInBasis, SystemError> {
        let lp = self.exact_lie_poly(&p.to_poly())?;
        Ok(lp.restrict(target)?)
    }
}

/// `E_lambda[p(lambda x (1 - x))]` given the moments `E[lambda^k]`.
///
/// `p(lambda q)` is expanded as a polynomial in `lambda` whose coefficients
/// are polynomials in `x`, via the basis recurrence in the rescaled variable.
fn logistic_expectation(p: &Poly, moments: impl Fn(usize) -> f64) -> Result<Poly, PolyError> {
    let basis = p.basis().clone();
    let (c, h) = match &basis {
        Basis::Monomial { .. } => (0.0, 1.0),
        Basis::Chebyshev { domain } => {
            let [lo, hi] = domain[0];
            (0.5 * (lo + hi), 0.5 * (hi - lo))
        }
    };
    let q = Poly::from_monomials(basis.clone(), &[(vec![1], 1.0), (vec![2], -1.0)]);
    // xi(lambda q) = -c/h + lambda q/h
    let xi: Vec<Poly> = vec![Poly::constant(basis.clone(), -c / h), q.scale(1.0 / h)];
    let max_j = p.terms().map(|(m, _)| m.exponents()[0]).max().unwrap_or(0) as usize;

    let lam_mul = |a: &[Poly], b: &[Poly]| -> Result<Vec<Poly>, PolyError> {
        let mut out = vec![Poly::zero(basis.clone()); a.len() + b.len() - 1];
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                out[i + j] = out[i + j].add(&ai.mul(bj)?)?;
            }
        }
        Ok(out)
    };
    let lam_sub = |a: &[Poly], b: &[Poly]| -> Result<Vec<Poly>, PolyError> {
        let n = a.len().max(b.len());
        let mut out = vec![Poly::zero(basis.clone()); n];
        for (i, ai) in a.iter().enumerate() {
            out[i] = out[i].add(ai)?;
        }
        for (i, bi) in b.iter().enumerate() {
            out[i] = out[i].sub(bi)?;
        }
        Ok(out)
    };

    let mut table: Vec<Vec<Poly>> = vec![vec![Poly::constant(basis.clone(), 1.0)]];
    if max_j >= 1 {
        table.push(xi.clone());
    }
    for j in 2..=max_j {
        let next = match basis {
            Basis::Monomial { .. } => lam_mul(&table[j - 1], &xi)?,
            Basis::Chebyshev { .. } => {
                let two_xi: Vec<Poly> = xi.iter().map(|t| t.scale(2.0)).collect();
                lam_sub(&lam_mul(&table[j - 1], &two_xi)?, &table[j - 2])?
            }
        };
        table.push(next);
    }
    let expected: Vec<Poly> = table
        .iter()
        .map(|lp| {
            lp.iter()
                .enumerate()
                .try_fold(Poly::zero(basis.clone()), |acc, (k, ck)| {
                    acc.add(&ck.scale(moments(k)))
                })
        })
        .collect::<Result<_, _>>()?;
    let mut out = Poly::zero(basis.clone());
    for (m, coef) in p.terms() {
        out = out.add(&expected[m.exponents()[0] as usize].scale(coef))?;
    }
    Ok(out)
}

/// Uniform variate in `[0, 1)` from the top 53 bits of one `u64`.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flat state history of an ODE solve.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dim: usize,
    pub tau: f64,
    pub states: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingMode {
    /// Consecutive states of one trajectory from `x0`, after discarding
    /// `burn_in` steps.
    Trajectory {
        x0: Vec<f64>,
        #[serde(default)]
        burn_in: usize,
    },
    /// Independent uniform states in a box, each advanced by one step.
    IidUniformBox { bounds: Vec<[f64; 2]> },
    /// Equally spaced points `(cos i tau, sin i tau)` on the unit circle.
    LimitCycle,
}

impl SamplingMode {
    pub fn name(&self) -> &'static str {
        match self {
            SamplingMode::Trajectory { .. } => "trajectory",
            SamplingMode::IidUniformBox { .. } => "iid_uniform_box",
            SamplingMode::LimitCycle => "limit_cycle",
        }
    }
}

/// What each snapshot's `y` records.
#[derive(Clone, Copy, Debug)]
pub enum Observation<'a> {
    /// State one step (or `tau`) later.
    Koopman,
    /// Exact Lie derivative of every element of the dictionary at `x_i`.
    /// Only available because the model is known; used for validation.
    Generator(&'a Dictionary),
}

/// Draws `n` snapshots. Discrete systems require `tau = 1`; continuous ones
/// advance by one RK4 step of size `tau`.
pub fn sample_snapshots(
    spec: &SystemSpec,
    mode: &SamplingMode,
    tau: f64,
    n: usize,
    seed: u64,
    obs: Observation<'_>,
) -> Result<SnapshotSet, SystemError> {
    let d = spec.dim();
    if n == 0 {
        return Err(SnapshotError::Empty.into());
    }
    if spec.time_kind() == TimeKind::Discrete && tau != 1.0 {
        return Err(SystemError::Unsupported(format!(
            "discrete system {} needs tau = 1, got {tau}",
            spec.name()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let advance = |x: &[f64], rng: &mut ChaCha8Rng| -> Result<Vec<f64>, SystemError> {
        match spec.time_kind() {
            TimeKind::Continuous => spec.rk4_step(x, tau),
            TimeKind::Discrete if spec.is_stochastic() => spec.step_stochastic(x, rng),
            TimeKind::Discrete => spec.step_map(x),
        }
    };

    let mut t = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n * d);
    // states x_0..x_n; y_i = x_{i+1} unless sampled iid
    let mut next = Vec::with_capacity(n * d);
    match mode {
        SamplingMode::Trajectory { x0, burn_in } => {
            spec.check_dim(x0)?;
            let mut x = x0.clone();
            for step in 0..*burn_in {
                x = advance(&x, &mut rng)?;
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(SystemError::NonFinite { step });
                }
            }
            for i in 0..n {
                let y = advance(&x, &mut rng)?;
                if !y.iter().all(|v| v.is_finite()) {
                    return Err(SystemError::NonFinite { step: burn_in + i });
                }
                t.push(i as f64 * tau);
                xs.extend_from_slice(&x);
                next.extend_from_slice(&y);
                x = y;
            }
        }
        SamplingMode::IidUniformBox { bounds } => {
            if bounds.len() != d {
                return Err(SystemError::Dimension {
                    expected: d,
                    got: bounds.len(),
                });
            }
            let mut x = vec![0.0; d];
            for _ in 0..n {
                for (k, [lo, hi]) in bounds.iter().enumerate() {
                    x[k] = lo + (hi - lo) * unit_f64(&mut rng);
                }
                let y = advance(&x, &mut rng)?;
                t.push(0.0);
                xs.extend_from_slice(&x);
                next.extend_from_slice(&y);
            }
        }
        SamplingMode::LimitCycle => {
            if *spec != SystemSpec::CircularOrbit {
                return Err(SystemError::Unsupported(format!(
                    "limit_cycle sampling is defined for circular_orbit, not {}",
                    spec.name()
                )));
            }
            for i in 0..n {
                let ti = i as f64 * tau;
                let tn = (i + 1) as f64 * tau;
                t.push(ti);
                xs.extend_from_slice(&[ti.cos(), ti.sin()]);
                next.extend_from_slice(&[tn.cos(), tn.sin()]);
            }
        }
    }

    let (q, kind, ys) = match obs {
        Observation::Koopman => (d, SnapshotKind::Koopman, next),
        Observation::Generator(phi) => {
            if phi.dim() != d {
                return Err(SystemError::Dimension {
                    expected: d,
                    got: phi.dim(),
                });
            }
            let lies: Vec<Poly> = (0..phi.len())
                .map(|j| spec.exact_lie_poly(&phi.element(j)))
                .collect::<Result<_, _>>()?;
            let mut ys = Vec::with_capacity(n * phi.len());
            for i in 0..n {
                for lp in &lies {
                    ys.push(lp.evaluate(&xs[i * d..(i + 1) * d])?);
                }
            }
            (phi.len(), SnapshotKind::Generator, ys)
        }
    };
    let set = SnapshotSet::new(d, q, tau, kind, t, xs, ys)?;
    Ok(set.with_provenance(spec.name(), mode.name(), Some(seed)))
}
