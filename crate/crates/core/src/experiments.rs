//! Reproduction runs: van der Pol and stochastic logistic bound tables, the
//! logistic convergence rate, the circular-orbit case study and the 2D map
//! Lyapunov search. Each run returns a long-format table with one cell per
//! (row, column) and the reference value it is compared against.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auxfn::{
    box_grid, circular_orbit_casestudy, ergodic_bound, find_lyapunov, AuxError, BoundOptions,
    BoundResult, Direction, LyapunovObjective, LyapunovResult,
};
use crate::koopman::{
    convergence_study, fit_edmd, moment_matrices_at, ConvergenceReference, ConvergenceSetup,
    ConvergenceStudy, EdmdOperators, KoopmanError, MomentMatrices, DEFAULT_REL_TOL,
};
use crate::polybasis::{Basis, Dictionary, MultiIndex, Poly, PolyError};
use crate::sdp::{SdpStatus, SolverOptions};
use crate::snapshots::{SnapshotError, SnapshotSet};
use crate::sos::{squared_norm, LieSource, SemialgebraicSet, SosError};
use crate::systems::{sample_snapshots, Observation, SamplingMode, SystemError, SystemSpec};

const REFERENCE_DATA: &str = include_str!("../data/reference_values.toml");

pub const VDP_TAU: f64 = 1e-3;
pub const VDP_X0: [f64; 2] = [0.1, 0.2];
/// Box for the Chebyshev basis; it encloses the limit cycle.
pub const VDP_DOMAIN: [f64; 2] = [-2.5, 2.5];
/// Relative SVD cutoff for `B^+`. Trajectory data hugging the limit cycle
/// makes `B` ill-conditioned (1e10 to 1e13 for psi of degree 10 to 12) yet
/// numerically full rank; the library default of 1e-12 would discard real
/// directions, and each discarded one enters `L` with weight `1/tau`.
pub const VDP_REL_TOL: f64 = 1e-15;
pub const LOGISTIC_X0: f64 = 0.3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Aux(#[from] AuxError),
    #[error(transparent)]
    Koopman(#[from] KoopmanError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error("reference data: {0}")]
    Reference(String),
    #[error("unknown table '{0}' (expected vdp, logistic, logistic_rate, circle or lyapunov)")]
    UnknownTable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableId {
    Vdp,
    Logistic,
    LogisticRate,
    Circle,
    Lyapunov,
}

impl TableId {
    pub const ALL: [TableId; 5] = [
        TableId::Vdp,
        TableId::Logistic,
        TableId::LogisticRate,
        TableId::Circle,
        TableId::Lyapunov,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TableId::Vdp => "vdp",
            TableId::Logistic => "logistic",
            TableId::LogisticRate => "logistic_rate",
            TableId::Circle => "circle",
            TableId::Lyapunov => "lyapunov",
        }
    }
}

impl std::str::FromStr for TableId {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TableId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| ExperimentError::UnknownTable(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub table: String,
    pub row: String,
    pub column: String,
    pub value: f64,
    pub origin: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceFile {
    entry: Vec<ReferenceEntry>,
}

/// The embedded reference values.
pub fn reference_values() -> Result<Vec<ReferenceEntry>, ExperimentError> {
    let file: ReferenceFile =
        toml::from_str(REFERENCE_DATA).map_err(|e| ExperimentError::Reference(e.to_string()))?;
    Ok(file.entry)
}

pub fn reference_value(table: TableId, row: &str, column: &str) -> Option<f64> {
    reference_values()
        .ok()?
        .into_iter()
        .find(|e| e.table == table.name() && e.row == row && e.column == column)
        .map(|e| e.value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproCell {
    pub row: String,
    pub column: String,
    /// `NaN` when the cell failed.
    pub value: f64,
    pub status: String,
    pub reference: Option<f64>,
    pub diff: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproTable {
    pub table: TableId,
    pub cells: Vec<ReproCell>,
    pub notes: Vec<String>,
}

impl ReproTable {
    fn new(table: TableId) -> Self {
        Self {
            table,
            cells: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn push(&mut self, row: &str, column: &str, value: f64, status: &str, seconds: f64) {
        let reference = reference_value(self.table, row, column);
        let diff = reference.filter(|_| value.is_finite()).map(|r| value - r);
        self.cells.push(ReproCell {
            row: row.to_string(),
            column: column.to_string(),
            value,
            status: status.to_string(),
            reference,
            diff,
            seconds,
        });
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<&ReproCell> {
        self.cells
            .iter()
            .find(|c| c.row == row && c.column == column)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "table",
            "row",
            "column",
            "value",
            "reference",
            "diff",
            "status",
            "seconds",
        ])
        .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                self.table.name().to_string(),
                c.row.clone(),
                c.column.clone(),
                format!("{:.10}", c.value),
                opt(c.reference),
                opt(c.diff),
                c.status.clone(),
                format!("{:.3}", c.seconds),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Row-by-column grid of values, reference in brackets.
    pub fn summary(&self) -> String {
        let mut rows: Vec<&str> = Vec::new();
        let mut cols: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !rows.contains(&c.row.as_str()) {
                rows.push(&c.row);
            }
            if !cols.contains(&c.column.as_str()) {
                cols.push(&c.column);
            }
        }
        let fmt = |c: Option<&ReproCell>| match c {
            None => String::new(),
            Some(c) => {
                let v = if c.value.is_finite() {
                    format!("{:.4}", c.value)
                } else {
                    c.status.clone()
                };
                match c.reference {
                    Some(r) => format!("{v} [{r:.4}]"),
                    None => v,
                }
            }
        };
        let rw = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut out = format!("{}\n", self.table.name());
        out += &format!("{:rw$}", "");
        let grid: Vec<Vec<String>> = rows
            .iter()
            .map(|r| cols.iter().map(|c| fmt(self.cell(r, c))).collect())
            .collect();
        let widths: Vec<usize> = (0..cols.len())
            .map(|j| {
                grid.iter()
                    .map(|g| g[j].len())
                    .chain([cols[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        for (c, w) in cols.iter().zip(&widths) {
            out += &format!("  {c:>w$}");
        }
        out.push('\n');
        for (r, g) in rows.iter().zip(&grid) {
            out += &format!("{r:rw$}");
            for (v, w) in g.iter().zip(&widths) {
                out += &format!("  {v:>w$}");
            }
            out.push('\n');
        }
        for n in &self.notes {
            out += &format!("note: {n}\n");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ReproOptions {
    pub solver: SolverOptions,
    pub seed: u64,
    /// Smaller grids and data sets, for smoke tests.
    pub quick: bool,
}

pub fn status_label(s: SdpStatus) -> &'static str {
    match s {
        SdpStatus::Optimal => "optimal",
        SdpStatus::Infeasible => "infeasible",
        SdpStatus::Unbounded => "unbounded",
        SdpStatus::MaxIter => "max_iter",
    }
}

fn bound_cell(r: &Result<BoundResult, ExperimentError>) -> (f64, String) {
    match r {
        Ok(b) => (b.bound, status_label(b.status).to_string()),
        Err(e) => (f64::NAN, format!("error: {e}")),
    }
}

// ---------------------------------------------------------------- van der Pol

/// Basis for the data-driven fits. The exact generator needs no data, and
/// its programs are solved in plain monomials, where the interior-point
/// iteration behaves better at low degree.
pub fn vdp_basis(exact: bool) -> Basis {
    if exact {
        Basis::monomial(2)
    } else {
        Basis::chebyshev_on(vec![VDP_DOMAIN; 2])
    }
}

/// `phi` of total degree `alpha`, `psi` of degree `alpha + 2`.
pub fn vdp_dictionaries(alpha: u32, exact: bool) -> (Dictionary, Dictionary) {
    let b = vdp_basis(exact);
    (
        Dictionary::total_degree(b.clone(), alpha),
        Dictionary::total_degree(b, alpha + 2),
    )
}

pub fn vdp_edmd(set: &SnapshotSet, alpha: u32) -> Result<LieSource, ExperimentError> {
    let (phi, psi) = vdp_dictionaries(alpha, false);
    let ops = crate::koopman::fit_edmd_with(set, &phi, &psi, VDP_REL_TOL)?;
    Ok(LieSource::Edmd { ops: Box::new(ops) })
}

/// `n` consecutive RK4 steps of size [`VDP_TAU`] from [`VDP_X0`].
pub fn vdp_trajectory(n: usize) -> Result<SnapshotSet, ExperimentError> {
    Ok(sample_snapshots(
        &SystemSpec::van_der_pol(),
        &SamplingMode::Trajectory {
            x0: VDP_X0.to_vec(),
            burn_in: 0,
        },
        VDP_TAU,
        n,
        0,
        Observation::Koopman,
    )?)
}

/// Upper bound on the average of `x1^2 + x2^2` with `V` of degree `alpha`.
pub fn vdp_upper(
    lie: &LieSource,
    alpha: u32,
    solver: &SolverOptions,
) -> Result<BoundResult, ExperimentError> {
    let (phi, _) = vdp_dictionaries(alpha, lie.is_exact());
    let g = squared_norm(phi.basis());
    let opts = BoundOptions {
        solver: *solver,
        ..Default::default()
    };
    Ok(ergodic_bound(
        Direction::Upper,
        &g,
        lie,
        &phi,
        &SemialgebraicSet::whole_space(),
        &opts,
    )?)
}

pub fn vdp_energy_average(set: &SnapshotSet) -> Result<f64, ExperimentError> {
    let basis = Basis::monomial(2);
    let g = squared_norm(&basis).restrict(&Dictionary::total_degree(basis, 2))?;
    Ok(set.empirical_average(&g)?)
}

fn run_vdp(opts: &ReproOptions) -> Result<ReproTable, ExperimentError> {
    let mut table = ReproTable::new(TableId::Vdp);
    let (alphas, horizons): (Vec<u32>, Vec<(&str, f64)>) = if opts.quick {
        (vec![4, 6], vec![("T=1e2", 2.0)])
    } else {
        (
            vec![4, 6, 8, 10],
            vec![("T=1e2", 2.0), ("T=1e2.5", 2.5), ("T=1e3", 3.0)],
        )
    };
    let ns: Vec<usize> = horizons
        .iter()
        .map(|(_, e)| (10f64.powf(*e) / VDP_TAU).round() as usize)
        .collect();
    let set = vdp_trajectory(*ns.last().expect("at least one horizon"))?;
    let amax = *alphas.iter().max().expect("degrees");
    let (big_phi, big_psi) = vdp_dictionaries(amax, false);
    let t0 = Instant::now();
    let moments = moment_matrices_at(&set, &big_phi, &big_psi, &ns)?;
    let moment_secs = t0.elapsed().as_secs_f64();

    // exact row, then one row per horizon
    let mut jobs: Vec<(String, u32, Option<&MomentMatrices>)> = alphas
        .iter()
        .map(|&a| ("exact".to_string(), a, None))
        .collect();
    for ((name, _), mm) in horizons.iter().zip(&moments) {
        jobs.extend(alphas.iter().map(|&a| (name.to_string(), a, Some(mm))));
    }
    let results: Vec<(Result<BoundResult, ExperimentError>, f64)> = jobs
        .par_iter()
        .map(|(_, a, mm)| {
            let t = Instant::now();
            let r = (|| {
                let lie = match mm {
                    None => LieSource::Exact {
                        system: SystemSpec::van_der_pol(),
                    },
                    Some(mm) => {
                        let (phi, psi) = vdp_dictionaries(*a, false);
                        let sub = mm.restrict(&big_phi, &big_psi, &phi, &psi)?;
                        let ops = EdmdOperators::from_moments(&sub, &phi, &psi, VDP_REL_TOL)?;
                        LieSource::Edmd { ops: Box::new(ops) }
                    }
                };
                vdp_upper(&lie, *a, &opts.solver)
            })();
            (r, t.elapsed().as_secs_f64())
        })
        .collect();
    for ((row, a, _), (r, secs)) in jobs.iter().zip(&results) {
        let (v, st) = bound_cell(r);
        table.push(row, &format!("alpha={a}"), v, &st, *secs);
    }
    for ((name, _), &n) in horizons.iter().zip(&ns) {
        let t = Instant::now();
        let avg = vdp_energy_average(&set.prefix(n)?)?;
        table.push(
            name,
            "empirical_average",
            avg,
            "ok",
            t.elapsed().as_secs_f64(),
        );
    }
    table.notes.push(format!(
        "data: one trajectory, tau = {VDP_TAU}, x0 = ({}, {}); data fits in the Chebyshev basis on [{}, {}]^2 (exact row in monomials), psi of degree alpha + 2, SVD cutoff {VDP_REL_TOL:e}; moments in {moment_secs:.1} s",
        VDP_X0[0], VDP_X0[1], VDP_DOMAIN[0], VDP_DOMAIN[1]
    ));
    Ok(table)
}

// ------------------------------------------------------------------ logistic

/// Chebyshev polynomials shifted to `[0, 1]`.
pub fn logistic_basis() -> Basis {
    Basis::chebyshev_on(vec![[0.0, 1.0]])
}

/// `phi = (T_0..T_alpha)`, `psi = (T_0..T_{2 alpha})`.
pub fn logistic_dictionaries(alpha: u32) -> (Dictionary, Dictionary) {
    let b = logistic_basis();
    (
        Dictionary::total_degree(b.clone(), alpha),
        Dictionary::total_degree(b, 2 * alpha),
    )
}

/// `[0, 1]` as `{x - x^2 >= 0}`.
pub fn logistic_set() -> Result<SemialgebraicSet, ExperimentError> {
    let s = Poly::from_monomials(Basis::monomial(1), &[(vec![1], 1.0), (vec![2], -1.0)])
        .convert(&logistic_basis());
    Ok(SemialgebraicSet::new(vec![s])?)
}

pub fn logistic_trajectory(n: usize, seed: u64) -> Result<SnapshotSet, ExperimentError> {
    Ok(sample_snapshots(
        &SystemSpec::logistic(),
        &SamplingMode::Trajectory {
            x0: vec![LOGISTIC_X0],
            burn_in: 0,
        },
        1.0,
        n,
        seed,
        Observation::Koopman,
    )?)
}

/// Bound on the average of `x` with `V` of degree `alpha` on `[0, 1]`.
pub fn logistic_bound(
    direction: Direction,
    lie: &LieSource,
    alpha: u32,
    solver: &SolverOptions,
) -> Result<BoundResult, ExperimentError> {
    let (phi, _) = logistic_dictionaries(alpha);
    let g = Poly::monomial_term(Basis::monomial(1), MultiIndex::new(vec![1]), 1.0)
        .convert(&logistic_basis());
    let opts = BoundOptions {
        solver: *solver,
        ..Default::default()
    };
    Ok(ergodic_bound(
        direction,
        &g,
        lie,
        &phi,
        &logistic_set()?,
        &opts,
    )?)
}

fn run_logistic(opts: &ReproOptions) -> Result<ReproTable, ExperimentError> {
    let mut table = ReproTable::new(TableId::Logistic);
    let (alphas, sizes): (Vec<u32>, Vec<(&str, usize)>) = if opts.quick {
        (vec![2, 4], vec![("n=1e4", 10_000), ("n=1e5", 100_000)])
    } else {
        (
            vec![2, 4, 6, 8, 10, 12, 14],
            vec![
                ("n=1e4", 10_000),
                ("n=1e5", 100_000),
                ("n=1e6", 1_000_000),
                ("n=1e7", 10_000_000),
            ],
        )
    };
    let ns: Vec<usize> = sizes.iter().map(|s| s.1).collect();
    let set = logistic_trajectory(*ns.last().expect("sizes"), opts.seed)?;
    let amax = *alphas.iter().max().expect("degrees");
    let (big_phi, big_psi) = logistic_dictionaries(amax);
    let moments = moment_matrices_at(&set, &big_phi, &big_psi, &ns)?;

    let mut jobs: Vec<(String, Direction, u32, Option<&MomentMatrices>)> = Vec::new();
    for dir in [Direction::Upper, Direction::Lower] {
        let tag = if dir == Direction::Upper {
            "upper"
        } else {
            "lower"
        };
        for ((name, _), mm) in sizes.iter().zip(&moments) {
            jobs.extend(
                alphas
                    .iter()
                    .map(|&a| (format!("{tag} {name}"), dir, a, Some(mm))),
            );
        }
        jobs.extend(
            alphas
                .iter()
                .map(|&a| (format!("{tag} exact"), dir, a, None)),
        );
    }
    let results: Vec<(Result<BoundResult, ExperimentError>, f64)> = jobs
        .par_iter()
        .map(|(_, dir, a, mm)| {
            let t = Instant::now();
            let r = (|| {
                let lie = match mm {
                    None => LieSource::Exact {
                        system: SystemSpec::logistic(),
                    },
                    Some(mm) => {
                        let (phi, psi) = logistic_dictionaries(*a);
                        let sub = mm.restrict(&big_phi, &big_psi, &phi, &psi)?;
                        let ops = EdmdOperators::from_moments(&sub, &phi, &psi, DEFAULT_REL_TOL)?;
                        LieSource::Edmd { ops: Box::new(ops) }
                    }
                };
                logistic_bound(*dir, &lie, *a, &opts.solver)
            })();
            (r, t.elapsed().as_secs_f64())
        })
        .collect();
    for ((row, _, a, _), (r, secs)) in jobs.iter().zip(&results) {
        let (v, st) = bound_cell(r);
        table.push(row, &format!("alpha={a}"), v, &st, *secs);
    }
    table.notes.push(format!(
        "data: one trajectory from x0 = {LOGISTIC_X0}, seed {}; Chebyshev basis on [0, 1]; psi has degree 2 alpha",
        opts.seed
    ));
    Ok(table)
}

/// `||K_n - K_inf||_F` for `(alpha, beta) = (4, 8)` against the closed-form
/// infinite-data matrix.
pub fn logistic_rate_setup(ns: Vec<usize>, seeds: Vec<u64>) -> ConvergenceSetup {
    let b = logistic_basis();
    ConvergenceSetup {
        system: SystemSpec::logistic(),
        mode: SamplingMode::Trajectory {
            x0: vec![LOGISTIC_X0],
            burn_in: 0,
        },
        tau: 1.0,
        phi: Dictionary::total_degree(b.clone(), 4),
        psi: Dictionary::total_degree(b, 8),
        n_grid: ns,
        seeds,
        reference: ConvergenceReference::AnalyticExact,
    }
}

fn run_logistic_rate(opts: &ReproOptions) -> Result<ReproTable, ExperimentError> {
    let mut table = ReproTable::new(TableId::LogisticRate);
    let ns = if opts.quick {
        vec![1_000, 10_000]
    } else {
        vec![10_000, 100_000, 1_000_000]
    };
    let seeds: Vec<u64> = (0..5).map(|k| opts.seed + k).collect();
    let t = Instant::now();
    let study: ConvergenceStudy = convergence_study(&logistic_rate_setup(ns, seeds))?;
    let secs = t.elapsed().as_secs_f64();
    for r in &study.rows {
        table.push(
            "alpha=4 beta=8",
            &format!("distance n={}", r.n),
            r.mean_distance,
            "ok",
            0.0,
        );
    }
    table.push("alpha=4 beta=8", "slope", study.slope, "ok", secs);
    table
        .notes
        .push("distances are means over 5 seeds of the Frobenius norm".into());
    Ok(table)
}

// -------------------------------------------------------------------- circle

pub const CIRCLE_TAU: f64 = 0.01;
pub const CIRCLE_N: usize = 1000;

fn run_circle(opts: &ReproOptions) -> Result<ReproTable, ExperimentError> {
    let mut table = ReproTable::new(TableId::Circle);
    let t = Instant::now();
    let cs = circular_orbit_casestudy(CIRCLE_TAU, CIRCLE_N, &opts.solver)?;
    let secs = t.elapsed().as_secs_f64();
    for (name, r) in [
        ("L_edmd", &cs.l_edmd),
        ("L_gedmd", &cs.l_gedmd),
        ("L_exact", &cs.l_exact),
    ] {
        table.push(name, "bound", r.bound, status_label(r.status), secs / 3.0);
    }
    table.notes.push(format!(
        "EDMD Lie image of 1 + x1^2 + x2^2 over psi: {:?}",
        cs.edmd_lie_of_form.coeffs
    ));
    table.notes.push(format!(
        "divergence indicator over psi: {:?}",
        cs.divergence_indicator.coeffs
    ));
    Ok(table)
}

// ----------------------------------------------------------------- Lyapunov

/// Data-driven Lyapunov search for the 2D map from `n` uniform samples on
/// `[-2, 2]^2`, `phi` of degree 4, `psi` of degree 8, l1 objective, with the
/// exact-model posterior check on a 41 x 41 grid.
pub fn map_lyapunov(
    n: usize,
    seed: u64,
    solver: &SolverOptions,
) -> Result<LyapunovResult, ExperimentError> {
    let system = SystemSpec::MapLyap2D;
    let bounds = vec![[-2.0, 2.0]; 2];
    let set = sample_snapshots(
        &system,
        &SamplingMode::IidUniformBox {
            bounds: bounds.clone(),
        },
        1.0,
        n,
        seed,
        Observation::Koopman,
    )?;
    let mono = Basis::monomial(2);
    let phi = Dictionary::total_degree(mono.clone(), 4);
    let psi = Dictionary::total_degree(mono, 8);
    let ops = fit_edmd(&set, &phi, &psi)?;
    let grid = box_grid(&bounds, 41);
    Ok(find_lyapunov(
        &LieSource::Edmd { ops: Box::new(ops) },
        &phi,
        LyapunovObjective::L1,
        Some((&system, &grid)),
        solver,
    )?)
}

fn run_lyapunov(opts: &ReproOptions) -> Result<ReproTable, ExperimentError> {
    let mut table = ReproTable::new(TableId::Lyapunov);
    let t = Instant::now();
    let r = map_lyapunov(10_000, opts.seed, &opts.solver)?;
    let secs = t.elapsed().as_secs_f64();
    table.push(
        "map_lyap_2d",
        "epsilon",
        r.epsilon_posterior.unwrap_or(f64::NAN),
        status_label(r.status),
        secs,
    );
    table.notes.push(format!(
        "V = {:?}",
        r.v.to_poly().terms().collect::<Vec<_>>()
    ));
    Ok(table)
}

pub fn run(table: TableId, opts: &ReproOptions) -> Result<ReproTable, ExperimentError> {
    match table {
        TableId::Vdp => run_vdp(opts),
        TableId::Logistic => run_logistic(opts),
        TableId::LogisticRate => run_logistic_rate(opts),
        TableId::Circle => run_circle(opts),
        TableId::Lyapunov => run_lyapunov(opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_file_parses_and_has_every_table() {
        let refs = reference_values().unwrap();
        for t in TableId::ALL {
            assert!(refs.iter().any(|e| e.table == t.name()), "{}", t.name());
        }
        assert_eq!(
            reference_value(TableId::Vdp, "exact", "alpha=6"),
            Some(4.01)
        );
    }

    #[test]
    fn table_names_round_trip() {
        for t in TableId::ALL {
            assert_eq!(t.name().parse::<TableId>().unwrap(), t);
        }
        assert!("nope".parse::<TableId>().is_err());
    }

    #[test]
    fn csv_has_diff_column() {
        let mut t = ReproTable::new(TableId::Circle);
        t.push("L_edmd", "bound", 0.5, "optimal", 0.0);
        let csv = t.to_csv();
        assert!(csv.starts_with("table,row,column,value,reference,diff"));
        assert!(csv.contains("-5.000000e-1"));
        assert!(t.summary().contains("L_edmd"));
    }
}
