//! Experiment configuration files (TOML). Unknown keys are rejected before
//! anything runs.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use koopsos::auxfn::{LyapunovObjective, VForm};
use koopsos::koopman::ConvergenceReference;
use koopsos::sdp::SolverOptions;
use koopsos::sos::SemialgebraicSet;
use koopsos::{Basis, Dictionary, Poly, SamplingMode, SystemSpec};

/// Polynomial given as `[[exponents], coefficient]` pairs in monomials.
pub type MonomialTerms = Vec<(Vec<u32>, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub sampling: Sampling,
    #[serde(default)]
    pub dictionaries: Option<Dictionaries>,
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub output: Output,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    #[default]
    Koopman,
    Generator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub mode: SamplingMode,
    pub tau: f64,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Read snapshots from this CSV (with sidecar) instead of simulating.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub observation: ObservationKind,
    /// Relative SVD cutoff for the pseudoinverse of the data Gram matrix.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    koopsos::koopman::DEFAULT_REL_TOL
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Monomial,
    Chebyshev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dictionaries {
    pub family: FamilyName,
    /// Box for the Chebyshev family; defaults to `[-1, 1]^d`.
    #[serde(default)]
    pub domain: Option<Vec<[f64; 2]>>,
    /// Total degree of `phi`.
    pub alpha: u32,
    /// Total degree of `psi`.
    pub beta: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Upper,
    Lower,
    Lyapunov,
    Casestudy,
    Convergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LieChoice {
    Exact,
    Edmd,
    Gedmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceChoice {
    AnalyticExact,
    LargestRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub bounds: Vec<[f64; 2]>,
    pub per_axis: usize,
}

/// Fields are validated per `kind` in [`ExperimentConfig::validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub kind: TaskKind,
    #[serde(default)]
    pub lie: Option<LieChoice>,
    /// Observable for bound tasks.
    #[serde(default)]
    pub g: Option<MonomialTerms>,
    /// Constraint set `{s_j >= 0}`; empty means the whole space.
    #[serde(default)]
    pub set: Vec<MonomialTerms>,
    #[serde(default)]
    pub v_form: Option<Vec<f64>>,
    #[serde(default)]
    pub objective: Option<LyapunovObjective>,
    #[serde(default)]
    pub verify_grid: Option<Grid>,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub reference: Option<ReferenceChoice>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

impl Solver {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| anyhow!("{}: {}", path.display(), e.to_string().trim_end()))?;
        if let Some(s) = ov.seed {
            cfg.sampling.seed = s;
        }
        if let Some(o) = &ov.out {
            cfg.output.dir = o.clone();
        }
        if let Some(t) = ov.tol {
            cfg.solver.tol = t;
        }
        // relative data paths are taken from the config's directory
        if let Some(d) = &cfg.sampling.data {
            if d.is_relative() {
                if let Some(parent) = path.parent() {
                    cfg.sampling.data = Some(parent.join(d));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.system.dim();
        let s = &self.sampling;
        if !(s.tau > 0.0 && s.tau.is_finite()) {
            bail!("sampling.tau must be positive, got {}", s.tau);
        }
        if s.n == 0 {
            bail!("sampling.n must be positive");
        }
        if !(s.rel_tol > 0.0 && s.rel_tol < 1.0) {
            bail!("sampling.rel_tol must lie in (0, 1), got {}", s.rel_tol);
        }
        if let SamplingMode::Trajectory { x0, .. } = &s.mode {
            if x0.len() != d {
                bail!(
                    "sampling.mode.x0 has {} entries, system dimension is {d}",
                    x0.len()
                );
            }
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            bail!("solver.tol must lie in (0, 1), got {}", self.solver.tol);
        }
        if let Some(dict) = &self.dictionaries {
            if dict.beta < dict.alpha {
                bail!(
                    "dictionaries.beta ({}) must be at least alpha ({})",
                    dict.beta,
                    dict.alpha
                );
            }
            if let Some(dom) = &dict.domain {
                if dict.family != FamilyName::Chebyshev {
                    bail!("dictionaries.domain only applies to the chebyshev family");
                }
                if dom.len() != d
                    || dom
                        .iter()
                        .any(|[a, b]| a.partial_cmp(b) != Some(std::cmp::Ordering::Less))
                {
                    bail!("dictionaries.domain must list {d} intervals [lo, hi] with lo < hi");
                }
            }
        }
        if let Some(t) = &self.task {
            let needs_dict = !matches!(t.kind, TaskKind::Casestudy);
            if needs_dict && self.dictionaries.is_none() {
                bail!("task.kind = {:?} needs a [dictionaries] section", t.kind);
            }
            match t.kind {
                TaskKind::Upper | TaskKind::Lower => {
                    if t.lie.is_none() {
                        bail!("task.lie is required for bound tasks");
                    }
                    let g =
                        t.g.as_ref()
                            .ok_or_else(|| anyhow!("task.g is required for bound tasks"))?;
                    check_terms("task.g", g, d)?;
                    for (k, s) in t.set.iter().enumerate() {
                        check_terms(&format!("task.set[{k}]"), s, d)?;
                    }
                }
                TaskKind::Lyapunov => {
                    if t.lie.is_none() {
                        bail!("task.lie is required for lyapunov tasks");
                    }
                    if let Some(g) = &t.verify_grid {
                        if g.bounds.len() != d || g.per_axis == 0 {
                            bail!("task.verify_grid needs {d} bounds and per_axis >= 1");
                        }
                    }
                }
                TaskKind::Convergence => {
                    if t.n_grid.is_empty() || t.seeds.is_empty() {
                        bail!("task.n_grid and task.seeds are required for convergence tasks");
                    }
                }
                TaskKind::Casestudy => {
                    if self.system != SystemSpec::CircularOrbit {
                        bail!("task.kind = casestudy is only defined for system circular_orbit");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn task(&self) -> Result<&Task> {
        self.task
            .as_ref()
            .ok_or_else(|| anyhow!("config has no [task] section"))
    }

    pub fn basis(&self) -> Result<Basis> {
        let dict = self.dict()?;
        let d = self.system.dim();
        Ok(match dict.family {
            FamilyName::Monomial => Basis::monomial(d),
            FamilyName::Chebyshev => match &dict.domain {
                Some(dom) => Basis::chebyshev_on(dom.clone()),
                None => Basis::chebyshev(d),
            },
        })
    }

    fn dict(&self) -> Result<&Dictionaries> {
        self.dictionaries
            .as_ref()
            .ok_or_else(|| anyhow!("config has no [dictionaries] section"))
    }

    pub fn phi_psi(&self) -> Result<(Dictionary, Dictionary)> {
        let dict = self.dict()?;
        let b = self.basis()?;
        Ok((
            Dictionary::total_degree(b.clone(), dict.alpha),
            Dictionary::total_degree(b, dict.beta),
        ))
    }

    pub fn poly(&self, terms: &MonomialTerms) -> Result<Poly> {
        Ok(Poly::from_monomials(Basis::monomial(self.system.dim()), terms).convert(&self.basis()?))
    }

    pub fn set(&self) -> Result<SemialgebraicSet> {
        let t = self.task()?;
        if t.set.is_empty() {
            return Ok(SemialgebraicSet::whole_space());
        }
        let polys = t
            .set
            .iter()
            .map(|s| self.poly(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(SemialgebraicSet::new(polys)?)
    }

    pub fn v_form(&self) -> Option<VForm> {
        self.task
            .as_ref()
            .and_then(|t| t.v_form.clone())
            .map(|pattern| VForm { pattern })
    }

    pub fn reference(&self) -> ConvergenceReference {
        match self.task.as_ref().and_then(|t| t.reference) {
            Some(ReferenceChoice::LargestRun) => ConvergenceReference::LargestRun,
            _ => ConvergenceReference::AnalyticExact,
        }
    }

    /// SHA-256 of the effective configuration (after overrides), as JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn check_terms(name: &str, terms: &MonomialTerms, d: usize) -> Result<()> {
    for (e, c) in terms {
        if e.len() != d {
            bail!(
                "{name}: exponent {e:?} has {} entries, system dimension is {d}",
                e.len()
            );
        }
        if !c.is_finite() {
            bail!("{name}: non-finite coefficient");
        }
    }
    Ok(())
}
