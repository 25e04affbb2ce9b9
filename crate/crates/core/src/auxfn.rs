//! Auxiliary functions: Lyapunov certificates and bounds on long-time
//! averages, with exact or data-driven Lie derivatives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::koopman::{fit_edmd, fit_gedmd, KoopmanError};
use crate::polybasis::{Basis, Dictionary, MultiIndex, Poly, PolyError, PolyInBasis};
use crate::sdp::{KktReport, SdpStatus, SolverOptions};
use crate::snapshots::SnapshotError;
use crate::sos::{
    self, squared_norm, InequalityConstraint, LieSource, LinearEquality, Objective,
    PosteriorReport, PosteriorTemplate, ScalarTerm, SemialgebraicSet, SosBases, SosError,
    SosProgram, Var,
};
use crate::systems::{sample_snapshots, Observation, SamplingMode, SystemError, SystemSpec};

pub const DATA_DRIVEN_VALIDITY: &str =
    "applies to trajectories where the approximate Lie derivative matches the exact one";
pub const EXACT_VALIDITY: &str = "applies to every trajectory that stays in the constraint set";

#[derive(Debug, Error)]
pub enum AuxError {
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("invalid setup: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upper,
    Lower,
}

/// Restricts `V` to multiples of a fixed coefficient pattern over `phi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VForm {
    pub pattern: Vec<f64>,
}

impl VForm {
    /// Equalities `p_k c_i - p_i c_k = 0` pinning `c` to the line through `p`.
    pub fn equalities(&self) -> Result<Vec<LinearEquality>, AuxError> {
        let p = &self.pattern;
        let k = (0..p.len())
            .max_by(|&i, &j| p[i].abs().total_cmp(&p[j].abs()))
            .filter(|&k| p[k] != 0.0)
            .ok_or_else(|| AuxError::Invalid("V-form pattern is zero".into()))?;
        Ok((0..p.len())
            .filter(|&i| i != k)
            .map(|i| LinearEquality {
                terms: vec![(Var::Coeff(i), p[k]), (Var::Coeff(k), -p[i])],
                rhs: 0.0,
            })
            .collect())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    pub solver: SolverOptions,
    #[serde(default)]
    pub v_form: Option<VForm>,
    /// Overrides [`sos::auto_bases`].
    #[serde(default)]
    pub bases: Option<SosBases>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub direction: Direction,
    /// `U` or `L`; `NaN` unless the solve was optimal.
    pub bound: f64,
    pub v: PolyInBasis,
    pub lie_source: String,
    pub status: SdpStatus,
    pub kkt: KktReport,
    pub iterations: usize,
    pub validity: String,
    #[serde(default)]
    pub posterior: Option<PosteriorReport>,
    /// The polynomial the SOS certificate shows nonnegative on the set;
    /// `None` unless the solve was optimal.
    #[serde(default)]
    pub certificate: Option<Poly>,
}

impl BoundResult {
    pub fn is_valid(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

/// The SOS program behind [`ergodic_bound`]; the bound is scalar 0.
///
/// Upper: minimize `U` with `U - g - Lie V >= 0` on the set.
/// Lower: maximize `L` with `g + Lie V - L >= 0` on the set.
pub fn bound_program(
    direction: Direction,
    g: &Poly,
    lie: &LieSource,
    phi: &Dictionary,
    set: &SemialgebraicSet,
    opts: &BoundOptions,
) -> Result<SosProgram, AuxError> {
    let basis = phi.basis().clone();
    if g.basis() != &basis {
        return Err(AuxError::Invalid("g and phi use different bases".into()));
    }
    let mut prog = SosProgram::new(Some(phi.clone()), Objective::feasibility());
    let bound = prog.add_scalar(match direction {
        Direction::Upper => "U",
        Direction::Lower => "L",
    });
    let one = Poly::constant(basis.clone(), 1.0);
    let mut con = InequalityConstraint::new(&basis);
    con.lie = Some(lie.clone());
    con.set = set.clone();
    con.bases = opts.bases.clone();
    match direction {
        Direction::Upper => {
            con.b = one.scale(-1.0);
            con.c = g.scale(-1.0);
            con.c_scalars.push(ScalarTerm {
                scalar: 0,
                poly: one,
            });
            prog.objective = Objective::minimize(bound);
        }
        Direction::Lower => {
            con.b = one.clone();
            con.c = g.clone();
            con.c_scalars.push(ScalarTerm {
                scalar: 0,
                poly: one.scale(-1.0),
            });
            prog.objective = Objective::maximize(bound);
        }
    }
    prog.constraints.push(con);
    if let Some(form) = &opts.v_form {
        if form.pattern.len() != phi.len() {
            return Err(AuxError::Invalid(
                "V-form pattern length differs from phi".into(),
            ));
        }
        prog.equalities.extend(form.equalities()?);
    }
    Ok(prog)
}

pub fn ergodic_bound(
    direction: Direction,
    g: &Poly,
    lie: &LieSource,
    phi: &Dictionary,
    set: &SemialgebraicSet,
    opts: &BoundOptions,
) -> Result<BoundResult, AuxError> {
    let prog = bound_program(direction, g, lie, phi, set, opts)?;
    let sol = sos::solve(&prog, &opts.solver)?;
    let optimal = sol.status == SdpStatus::Optimal;
    let certificate = if optimal {
        Some(sos::certificate_poly(&prog, &sol, 0)?)
    } else {
        None
    };
    Ok(BoundResult {
        direction,
        bound: if optimal { sol.scalars[0] } else { f64::NAN },
        v: sol.v(&prog).expect("phi present"),
        lie_source: lie.name().to_string(),
        status: sol.status,
        kkt: sol.sdp.kkt,
        iterations: sol.sdp.iterations,
        validity: if lie.is_exact() {
            EXACT_VALIDITY
        } else {
            DATA_DRIVEN_VALIDITY
        }
        .to_string(),
        posterior: None,
        certificate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovObjective {
    L1,
    Feasibility,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovResult {
    pub v: PolyInBasis,
    pub feasible: bool,
    pub status: SdpStatus,
    pub kkt: KktReport,
    pub lie_source: String,
    /// Largest `eps` for which the exact generator certifies decay of `V`;
    /// `None` when no exact model was supplied.
    pub epsilon_posterior: Option<f64>,
    pub posterior: Option<PosteriorReport>,
}

/// Search for `V` in span `phi` with `V - |x|^2 >= 0` and `-Lie V - |x|^2 >= 0`
/// everywhere. With `verify` the decay condition of the returned `V` is
/// re-checked against the exact generator, maximizing its `eps`.
pub fn find_lyapunov(
    lie: &LieSource,
    phi: &Dictionary,
    objective: LyapunovObjective,
    verify: Option<(&SystemSpec, &[Vec<f64>])>,
    solver: &SolverOptions,
) -> Result<LyapunovResult, AuxError> {
    let basis = phi.basis().clone();
    let norm2 = squared_norm(&basis);
    let one = Poly::constant(basis.clone(), 1.0);
    let mut prog = SosProgram::new(
        Some(phi.clone()),
        match objective {
            LyapunovObjective::L1 => Objective::l1(),
            LyapunovObjective::Feasibility => Objective::feasibility(),
        },
    );
    let mut positivity = InequalityConstraint::new(&basis);
    positivity.a = one.clone();
    positivity.c = norm2.scale(-1.0);
    let mut decay = InequalityConstraint::new(&basis);
    decay.b = one.scale(-1.0);
    decay.c = norm2.scale(-1.0);
    decay.lie = Some(lie.clone());
    prog.constraints.push(positivity);
    prog.constraints.push(decay);

    let sol = sos::solve(&prog, solver)?;
    let feasible = sol.status == SdpStatus::Optimal;
    let v = sol.v(&prog).expect("phi present");
    let posterior = match (verify, feasible) {
        (Some((system, grid)), true) => {
            let template = PosteriorTemplate {
                a: Poly::zero(basis.clone()),
                b: one.scale(-1.0),
                c: Poly::zero(basis.clone()),
                eps_weight: norm2.clone(),
                set: SemialgebraicSet::whole_space(),
            };
            Some(sos::posterior_verify(
                &v.to_poly(),
                system,
                &template,
                grid,
                solver,
            )?)
        }
        _ => None,
    };
    Ok(LyapunovResult {
        v,
        feasible,
        status: sol.status,
        kkt: sol.sdp.kkt,
        lie_source: lie.name().to_string(),
        epsilon_posterior: posterior.as_ref().map(|p| p.epsilon),
        posterior,
    })
}

/// Regular grid over a box, `per_axis` points per coordinate.
pub fn box_grid(bounds: &[[f64; 2]], per_axis: usize) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut k| {
            (0..d)
                .map(|i| {
                    let j = k % per_axis;
                    k /= per_axis;
                    let [lo, hi] = bounds[i];
                    if per_axis == 1 {
                        0.5 * (lo + hi)
                    } else {
                        lo + (hi - lo) * j as f64 / (per_axis - 1) as f64
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleCaseStudy {
    pub tau: f64,
    pub n: usize,
    pub l_edmd: BoundResult,
    pub l_gedmd: BoundResult,
    pub l_exact: BoundResult,
    /// Fitted EDMD Lie image of `1 + x1^2 + x2^2` (gamma = 1), over psi.
    pub edmd_lie_of_form: PolyInBasis,
    pub gedmd_lie_of_form: PolyInBasis,
    pub exact_lie_of_form: Poly,
    /// `c . Theta (B B^+ - I) psi` for `c` = the form, over psi.
    pub divergence_indicator: PolyInBasis,
    /// `approximate - exact` Lie images of the form; each vanishes exactly
    /// on the set where the two agree.
    pub edmd_minus_exact: Poly,
    pub gedmd_minus_exact: Poly,
}

/// Circular-orbit pipeline: data on the unit circle, `phi = (1, x1^2, x2^2)`,
/// `psi = (1, x1^2, x1 x2, x2^2)`, `V = gamma (1 + x1^2 + x2^2)`, lower bound on
/// the average of `x1^2 + x2^2` over R^2 with EDMD, gEDMD and the exact Lie
/// derivative.
pub fn circular_orbit_casestudy(
    tau: f64,
    n: usize,
    solver: &SolverOptions,
) -> Result<CircleCaseStudy, AuxError> {
    let system = SystemSpec::CircularOrbit;
    let basis = Basis::monomial(2);
    let mi = |e: [u32; 2]| MultiIndex::new(e.to_vec());
    let phi = Dictionary::new(basis.clone(), vec![mi([0, 0]), mi([2, 0]), mi([0, 2])])?;
    let psi = Dictionary::new(
        basis.clone(),
        vec![mi([0, 0]), mi([2, 0]), mi([1, 1]), mi([0, 2])],
    )?;
    let form = VForm {
        pattern: vec![1.0, 1.0, 1.0],
    };
    let v1 = PolyInBasis::new(phi.clone(), form.pattern.clone())?;

    let data = sample_snapshots(
        &system,
        &SamplingMode::LimitCycle,
        tau,
        n,
        0,
        Observation::Koopman,
    )?;
    let gdata = sample_snapshots(
        &system,
        &SamplingMode::LimitCycle,
        tau,
        n,
        0,
        Observation::Generator(&phi),
    )?;
    let edmd = fit_edmd(&data, &phi, &psi)?;
    let gedmd = fit_gedmd(&gdata, &phi, &psi)?;

    let g = squared_norm(&basis);
    let set = SemialgebraicSet::whole_space();
    let opts = BoundOptions {
        solver: *solver,
        v_form: Some(form),
        bases: None,
    };
    let src_edmd = LieSource::Edmd {
        ops: Box::new(edmd.clone()),
    };
    let src_gedmd = LieSource::Gedmd {
        ops: Box::new(gedmd),
    };
    let src_exact = LieSource::Exact {
        system: system.clone(),
    };
    let l_edmd = ergodic_bound(Direction::Lower, &g, &src_edmd, &phi, &set, &opts)?;
    let l_gedmd = ergodic_bound(Direction::Lower, &g, &src_gedmd, &phi, &set, &opts)?;
    let l_exact = ergodic_bound(Direction::Lower, &g, &src_exact, &phi, &set, &opts)?;

    let vpoly = v1.to_poly();
    let edmd_img = src_edmd.apply(&vpoly)?;
    let gedmd_img = src_gedmd.apply(&vpoly)?;
    let exact_img = src_exact.apply(&vpoly)?;
    Ok(CircleCaseStudy {
        tau,
        n,
        edmd_lie_of_form: edmd_img.restrict(&psi)?,
        gedmd_lie_of_form: gedmd_img.restrict(&psi)?,
        divergence_indicator: edmd.divergence_indicator(&v1)?,
        edmd_minus_exact: edmd_img.sub(&exact_img)?,
        gedmd_minus_exact: gedmd_img.sub(&exact_img)?,
        exact_lie_of_form: exact_img,
        l_edmd,
        l_gedmd,
        l_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polybasis::total_degree_dictionary;
    use crate::polybasis::Family;

    #[test]
    fn constant_observable_bounds_are_exact() {
        let phi = total_degree_dictionary(Family::Monomial, 2, 2);
        let g = Poly::constant(Basis::monomial(2), 5.0);
        let lie = LieSource::Exact {
            system: SystemSpec::MapLyap2D,
        };
        let set = SemialgebraicSet::whole_space();
        for dir in [Direction::Upper, Direction::Lower] {
            let r = ergodic_bound(dir, &g, &lie, &phi, &set, &BoundOptions::default()).unwrap();
            assert_eq!(r.status, SdpStatus::Optimal);
            assert!((r.bound - 5.0).abs() < 1e-6, "{dir:?} {}", r.bound);
        }
    }

    #[test]
    fn stable_linear_map_has_quadratic_lyapunov_function() {
        let system = SystemSpec::LinearMap {
            matrix: vec![vec![0.5]],
        };
        let phi = total_degree_dictionary(Family::Monomial, 1, 2);
        let lie = LieSource::Exact {
            system: system.clone(),
        };
        let grid = box_grid(&[[-1.0, 1.0]], 21);
        let r = find_lyapunov(
            &lie,
            &phi,
            LyapunovObjective::L1,
            Some((&system, &grid)),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(r.feasible);
        // V = c x^2 needs c >= 1 and 0.75 c >= 1; the l1 minimizer is 4/3.
        let c2 = r.v.coeffs[2];
        assert!((c2 - 4.0 / 3.0).abs() < 1e-5, "{:?}", r.v.coeffs);
        assert!(r.epsilon_posterior.unwrap() >= 1.0 - 1e-5);
    }

    #[test]
    fn expanding_map_has_no_lyapunov_function() {
        let system = SystemSpec::LinearMap {
            matrix: vec![vec![2.0]],
        };
        let phi = total_degree_dictionary(Family::Monomial, 1, 4);
        let lie = LieSource::Exact { system };
        let r = find_lyapunov(
            &lie,
            &phi,
            LyapunovObjective::Feasibility,
            None,
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(!r.feasible);
        assert_eq!(r.status, SdpStatus::Infeasible);
    }

    #[test]
    fn vform_equalities_pin_direction() {
        let eqs = VForm {
            pattern: vec![1.0, 2.0, 0.0],
        }
        .equalities()
        .unwrap();
        assert_eq!(eqs.len(), 2);
        // c = (1, 2, 0) satisfies them
        let c = [1.0, 2.0, 0.0];
        for e in &eqs {
            let lhs: f64 = e
                .terms
                .iter()
                .map(|(v, k)| match v {
                    Var::Coeff(i) => k * c[*i],
                    Var::Scalar(_) => unreachable!(),
                })
                .sum();
            assert!(lhs.abs() < 1e-15);
        }
    }

    #[test]
    fn grid_covers_corners() {
        let g = box_grid(&[[-2.0, 2.0], [0.0, 1.0]], 3);
        assert_eq!(g.len(), 9);
        assert!(g.contains(&vec![-2.0, 0.0]) && g.contains(&vec![2.0, 1.0]));
    }
}
