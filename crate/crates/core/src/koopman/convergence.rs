//! Convergence of `K` towards a reference as the number of snapshots grows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{moment_matrices_at, EdmdOperators, KoopmanError, DEFAULT_REL_TOL};
use crate::polybasis::{inclusion_matrix, Dictionary};
use crate::systems::{sample_snapshots, Observation, SamplingMode, SystemSpec, TimeKind};

/// What `K_n` is compared against.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvergenceReference {
    /// `Theta + (exact Lie coefficients)`; this is the infinite-data limit
    /// whenever the one-step image of `phi` lies in `span psi` and `B` is
    /// invertible under the sampling measure.
    AnalyticExact,
    /// The fit on the largest `n` of the same seed.
    LargestRun,
    Fixed(DMatrix<f64>),
}

#[derive(Clone, Debug)]
pub struct ConvergenceSetup {
    pub system: SystemSpec,
    pub mode: SamplingMode,
    pub tau: f64,
    pub phi: Dictionary,
    pub psi: Dictionary,
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub reference: ConvergenceReference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    /// Mean over seeds of `||K_n - K_ref||_F`.
    pub mean_distance: f64,
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log(mean_distance)` against `log(n)`, over
    /// rows with a positive distance.
    pub slope: f64,
}

/// `K` implied by the exact one-step map, written over `psi`. Discrete
/// systems only.
pub fn exact_koopman_matrix(
    system: &SystemSpec,
    phi: &Dictionary,
    psi: &Dictionary,
) -> Result<DMatrix<f64>, KoopmanError> {
    if system.time_kind() != TimeKind::Discrete {
        return Err(KoopmanError::Unsupported(format!(
            "no closed-form Koopman matrix for continuous system {}",
            system.name()
        )));
    }
    let mut k = inclusion_matrix(phi, psi)?;
    for j in 0..phi.len() {
        let lie = system.exact_lie_poly(&phi.element(j))?.restrict(psi)?;
        for (c, v) in lie.coeffs.iter().enumerate() {
            k[(j, c)] += v;
        }
    }
    Ok(k)
}

pub fn loglog_slope(ns: &[f64], ds: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(ds)
        .filter(|(_, d)| **d > 0.0)
        .map(|(n, d)| (n.ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn convergence_study(setup: &ConvergenceSetup) -> Result<ConvergenceStudy, KoopmanError> {
    let mut grid = setup.n_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    let n_max = *grid
        .last()
        .ok_or_else(|| KoopmanError::Invalid("empty n grid".into()))?;
    if setup.seeds.is_empty() {
        return Err(KoopmanError::Invalid("no seeds".into()));
    }
    let fixed_ref = match &setup.reference {
        ConvergenceReference::AnalyticExact => {
            Some(exact_koopman_matrix(&setup.system, &setup.phi, &setup.psi)?)
        }
        ConvergenceReference::Fixed(k) => Some(k.clone()),
        ConvergenceReference::LargestRun => None,
    };
    let mut per_seed: Vec<Vec<f64>> = Vec::with_capacity(setup.seeds.len());
    for &seed in &setup.seeds {
        let set = sample_snapshots(
            &setup.system,
            &setup.mode,
            setup.tau,
            n_max,
            seed,
            Observation::Koopman,
        )?;
        let mms = moment_matrices_at(&set, &setup.phi, &setup.psi, &grid)?;
        let ks: Vec<DMatrix<f64>> = mms
            .iter()
            .map(|mm| {
                EdmdOperators::from_moments(mm, &setup.phi, &setup.psi, DEFAULT_REL_TOL)
                    .map(|ops| ops.k.expect("koopman data"))
            })
            .collect::<Result<_, _>>()?;
        let reference = fixed_ref
            .clone()
            .unwrap_or_else(|| ks.last().unwrap().clone());
        per_seed.push(ks.iter().map(|k| (k - &reference).norm()).collect());
    }
    let rows: Vec<ConvergenceRow> = grid
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let distances: Vec<f64> = per_seed.iter().map(|d| d[i]).collect();
            ConvergenceRow {
                n,
                mean_distance: distances.iter().sum::<f64>() / distances.len() as f64,
                distances,
            }
        })
        .collect();
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ds: Vec<f64> = rows.iter().map(|r| r.mean_distance).collect();
    Ok(ConvergenceStudy {
        slope: loglog_slope(&ns, &ds),
        rows,
    })
}
