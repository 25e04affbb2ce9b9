mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{ExperimentConfig, LieChoice, ObservationKind, Overrides, TaskKind};
use koopsos::auxfn::{
    bound_program, box_grid, circular_orbit_casestudy, ergodic_bound, find_lyapunov, BoundOptions,
    Direction, LyapunovObjective,
};
use koopsos::experiments::{self, ReproOptions, TableId};
use koopsos::koopman::{convergence_study, fit_edmd_with, fit_gedmd_with, ConvergenceSetup};
use koopsos::sdp::{self, SdpProblem, SdpSolution, SdpStatus, SolverOptions};
use koopsos::sos::{self, LieSource};
use koopsos::{sample_snapshots, Observation, SnapshotSet};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(
    name = "koopsos",
    version,
    about = "Data-driven Lie derivatives and SOS auxiliary functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the solver tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample snapshots and write them as CSV with a JSON sidecar.
    Simulate { config: PathBuf },
    /// Fit EDMD/gEDMD operators, or run a convergence study.
    Fit { config: PathBuf },
    /// Upper or lower bound on a long-time average, or the circle case study.
    Bound { config: PathBuf },
    /// Search for a Lyapunov function.
    Lyapunov { config: PathBuf },
    /// Rerun one of the reference experiments and diff against stored values.
    Reproduce {
        /// vdp | logistic | logistic_rate | circle | lyapunov
        table: String,
        /// Reduced grids and data sizes.
        #[arg(long)]
        quick: bool,
    },
    /// Solve an SDP JSON file, or check a given solution, with KKT verification.
    Verify {
        problem: PathBuf,
        #[arg(long)]
        solution: Option<PathBuf>,
    },
}

enum Failure {
    /// Exit 2.
    Config(anyhow::Error),
    /// Exit 1.
    Nonoptimal(String),
    /// Exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    version: &'static str,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_hash: Option<String>,
    config: Option<&'a ExperimentConfig>,
    result: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn stamp<'a, T: Serialize>(
    cfg: &'a ExperimentConfig,
    data: Option<&SnapshotSet>,
    result: T,
) -> Stamped<'a, T> {
    Stamped {
        version: VERSION,
        config_hash: cfg.hash(),
        data_hash: data.map(SnapshotSet::data_hash),
        config: Some(cfg),
        result,
    }
}

fn load(path: &Path, ov: &Overrides) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path, ov).map_err(Failure::Config)
}

fn snapshots(cfg: &ExperimentConfig, generator: bool) -> anyhow::Result<SnapshotSet> {
    let s = &cfg.sampling;
    if let Some(path) = &s.data {
        return SnapshotSet::load_csv(path).with_context(|| format!("loading {}", path.display()));
    }
    let obs_phi;
    let obs = if generator {
        obs_phi = cfg.phi_psi()?.0;
        Observation::Generator(&obs_phi)
    } else {
        Observation::Koopman
    };
    Ok(sample_snapshots(
        &cfg.system,
        &s.mode,
        s.tau,
        s.n,
        s.seed,
        obs,
    )?)
}

fn lie_source(
    cfg: &ExperimentConfig,
    lie: LieChoice,
) -> anyhow::Result<(LieSource, Option<SnapshotSet>)> {
    let (phi, psi) = cfg.phi_psi()?;
    let rel = cfg.sampling.rel_tol;
    Ok(match lie {
        LieChoice::Exact => (
            LieSource::Exact {
                system: cfg.system.clone(),
            },
            None,
        ),
        LieChoice::Edmd => {
            let data = snapshots(cfg, false)?;
            let ops = fit_edmd_with(&data, &phi, &psi, rel)?;
            (LieSource::Edmd { ops: Box::new(ops) }, Some(data))
        }
        LieChoice::Gedmd => {
            let data = snapshots(cfg, true)?;
            let ops = fit_gedmd_with(&data, &phi, &psi, rel)?;
            (LieSource::Gedmd { ops: Box::new(ops) }, Some(data))
        }
    })
}

fn cmd_simulate(cfg: &ExperimentConfig) -> CmdResult {
    let generator = cfg.sampling.observation == ObservationKind::Generator;
    let data = snapshots(cfg, generator)?;
    let csv = cfg.output.dir.join("snapshots.csv");
    fs::create_dir_all(&cfg.output.dir)
        .with_context(|| format!("creating {}", cfg.output.dir.display()))?;
    data.save_csv(&csv).map_err(anyhow::Error::from)?;
    #[derive(Serialize)]
    struct Manifest {
        csv: PathBuf,
        rows: usize,
    }
    write_json(
        &cfg.output.dir.join("simulate.json"),
        &stamp(
            cfg,
            Some(&data),
            Manifest {
                csv: csv.clone(),
                rows: data.len(),
            },
        ),
    )?;
    println!("wrote {} snapshots to {}", data.len(), csv.display());
    Ok(())
}

fn cmd_fit(cfg: &ExperimentConfig) -> CmdResult {
    let (phi, psi) = cfg.phi_psi()?;
    if let Some(t) = cfg
        .task
        .as_ref()
        .filter(|t| t.kind == TaskKind::Convergence)
    {
        let setup = ConvergenceSetup {
            system: cfg.system.clone(),
            mode: cfg.sampling.mode.clone(),
            tau: cfg.sampling.tau,
            phi,
            psi,
            n_grid: t.n_grid.clone(),
            seeds: t.seeds.clone(),
            reference: cfg.reference(),
        };
        let study = convergence_study(&setup).map_err(anyhow::Error::from)?;
        for r in &study.rows {
            println!(
                "n = {:>9}  mean ||K_n - K_ref||_F = {:.4e}",
                r.n, r.mean_distance
            );
        }
        println!("log-log slope {:.4}", study.slope);
        write_json(
            &cfg.output.dir.join("convergence.json"),
            &stamp(cfg, None, &study),
        )?;
        return Ok(());
    }
    let lie = cfg
        .task
        .as_ref()
        .and_then(|t| t.lie)
        .unwrap_or(LieChoice::Edmd);
    let (src, data) = lie_source(cfg, lie)?;
    let ops = match src {
        LieSource::Edmd { ops } | LieSource::Gedmd { ops } => ops,
        LieSource::Exact { .. } => {
            return Err(Failure::Config(anyhow!(
                "fit needs task.lie = edmd or gedmd"
            )))
        }
    };
    let r = &ops.svd_report;
    println!(
        "fitted {} x {} operators from {} snapshots; numerical rank {} of {}",
        ops.phi.len(),
        ops.psi.len(),
        ops.n,
        r.rank,
        ops.psi.len()
    );
    write_json(
        &cfg.output.dir.join("operators.json"),
        &stamp(cfg, data.as_ref(), &*ops),
    )?;
    Ok(())
}

fn cmd_bound(cfg: &ExperimentConfig) -> CmdResult {
    let task = cfg.task().map_err(Failure::Config)?;
    let solver = cfg.solver.options();
    if task.kind == TaskKind::Casestudy {
        let cs = circular_orbit_casestudy(cfg.sampling.tau, cfg.sampling.n, &solver)
            .map_err(anyhow::Error::from)?;
        println!(
            "L_edmd = {:.8}  L_gedmd = {:.8}  L_exact = {:.8}",
            cs.l_edmd.bound, cs.l_gedmd.bound, cs.l_exact.bound
        );
        write_json(
            &cfg.output.dir.join("casestudy.json"),
            &stamp(cfg, None, &cs),
        )?;
        let all = [&cs.l_edmd, &cs.l_gedmd, &cs.l_exact]
            .iter()
            .all(|b| b.is_valid());
        return if all {
            Ok(())
        } else {
            Err(Failure::Nonoptimal(
                "a case-study bound was not solved to optimality".into(),
            ))
        };
    }
    let direction = match task.kind {
        TaskKind::Upper => Direction::Upper,
        TaskKind::Lower => Direction::Lower,
        k => {
            return Err(Failure::Config(anyhow!(
                "bound needs task.kind = upper, lower or casestudy, got {k:?}"
            )))
        }
    };
    let (phi, _) = cfg.phi_psi()?;
    let g = cfg.poly(task.g.as_ref().expect("validated"))?;
    let set = cfg.set()?;
    let opts = BoundOptions {
        solver,
        v_form: cfg.v_form(),
        bases: None,
    };
    let (lie, data) = lie_source(cfg, task.lie.expect("validated"))?;
    let prog =
        bound_program(direction, &g, &lie, &phi, &set, &opts).map_err(anyhow::Error::from)?;
    let compiled = sos::compile(&prog).map_err(anyhow::Error::from)?;
    fs::create_dir_all(&cfg.output.dir)
        .with_context(|| format!("creating {}", cfg.output.dir.display()))?;
    fs::write(
        cfg.output.dir.join("bound.sdp.json"),
        compiled.problem.to_json(),
    )
    .context("writing SDP")?;
    let res = ergodic_bound(direction, &g, &lie, &phi, &set, &opts).map_err(anyhow::Error::from)?;
    println!(
        "{:?} bound {} ({}, {} iterations, max KKT residual {:.2e})",
        direction,
        res.bound,
        experiments::status_label(res.status),
        res.iterations,
        res.kkt.max()
    );
    println!("validity: {}", res.validity);
    write_json(
        &cfg.output.dir.join("bound.json"),
        &stamp(cfg, data.as_ref(), &res),
    )?;
    if res.is_valid() {
        Ok(())
    } else {
        Err(Failure::Nonoptimal(format!(
            "solver status {}",
            experiments::status_label(res.status)
        )))
    }
}

fn cmd_lyapunov(cfg: &ExperimentConfig) -> CmdResult {
    let task = cfg.task().map_err(Failure::Config)?;
    if task.kind != TaskKind::Lyapunov {
        return Err(Failure::Config(anyhow!(
            "lyapunov needs task.kind = lyapunov, got {:?}",
            task.kind
        )));
    }
    let (phi, _) = cfg.phi_psi()?;
    let (lie, data) = lie_source(cfg, task.lie.expect("validated"))?;
    let grid = task
        .verify_grid
        .as_ref()
        .map(|g| box_grid(&g.bounds, g.per_axis));
    let verify = grid.as_ref().map(|g| (&cfg.system, g.as_slice()));
    let res = find_lyapunov(
        &lie,
        &phi,
        task.objective.unwrap_or(LyapunovObjective::L1),
        verify,
        &cfg.solver.options(),
    )
    .map_err(anyhow::Error::from)?;
    println!(
        "feasible: {} ({}), posterior eps: {}",
        res.feasible,
        experiments::status_label(res.status),
        res.epsilon_posterior
            .map(|e| format!("{e:.6}"))
            .unwrap_or_else(|| "-".into())
    );
    write_json(
        &cfg.output.dir.join("lyapunov.json"),
        &stamp(cfg, data.as_ref(), &res),
    )?;
    if res.feasible {
        Ok(())
    } else {
        Err(Failure::Nonoptimal(format!(
            "solver status {}",
            experiments::status_label(res.status)
        )))
    }
}

fn cmd_reproduce(table: &str, quick: bool, ov: &Overrides) -> CmdResult {
    let id: TableId = table
        .parse()
        .map_err(|e| Failure::Config(anyhow::Error::from(e)))?;
    let mut opts = ReproOptions {
        quick,
        ..Default::default()
    };
    if let Some(s) = ov.seed {
        opts.seed = s;
    }
    if let Some(t) = ov.tol {
        opts.solver.tol = t;
    }
    let dir = ov.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let t = experiments::run(id, &opts).map_err(anyhow::Error::from)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(format!("{}.csv", id.name())), t.to_csv()).context("writing CSV")?;
    #[derive(Serialize)]
    struct Run<'a> {
        options: ReproOptions,
        table: &'a experiments::ReproTable,
    }
    let opts_hash = {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(
            serde_json::to_vec(&opts).expect("options serialize"),
        ))
    };
    write_json(
        &dir.join(format!("{}.json", id.name())),
        &Stamped {
            version: VERSION,
            config_hash: opts_hash,
            data_hash: None,
            config: None,
            result: Run {
                options: opts,
                table: &t,
            },
        },
    )?;
    print!("{}", t.summary());
    Ok(())
}

fn cmd_verify(problem: &Path, solution: Option<&Path>, tol: Option<f64>) -> CmdResult {
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
    let p = SdpProblem::from_json(&read(problem).map_err(Failure::Config)?)
        .map_err(|e| Failure::Config(anyhow!("{}: {e}", problem.display())))?;
    let opts = SolverOptions {
        tol: tol.unwrap_or(SolverOptions::default().tol),
        ..Default::default()
    };
    let (status, report) = match solution {
        Some(path) => {
            let sol: SdpSolution = serde_json::from_str(&read(path).map_err(Failure::Config)?)
                .map_err(|e| Failure::Config(anyhow!("{}: {e}", path.display())))?;
            if sol.z.len() != p.num_vars() || sol.y.len() != p.num_rows() {
                return Err(Failure::Config(anyhow!(
                    "solution dimensions do not match the problem"
                )));
            }
            let rep = sdp::verify_kkt(&p, &sol);
            let st = if rep.passes(opts.tol) {
                SdpStatus::Optimal
            } else {
                SdpStatus::MaxIter
            };
            (st, rep)
        }
        None => {
            let sol = sdp::solve(&p, &opts).map_err(|e| Failure::Config(anyhow!("{e}")))?;
            println!(
                "objective {:.10} ({} iterations)",
                sol.objective, sol.iterations
            );
            (sol.status, sdp::verify_kkt(&p, &sol))
        }
    };
    println!(
        "status {}  primal {:.2e}  dual {:.2e}  gap {:.2e}  cone {:.2e}",
        experiments::status_label(status),
        report.primal_feas,
        report.dual_feas,
        report.gap,
        report.cone_violation
    );
    if status == SdpStatus::Optimal && report.passes(opts.tol) {
        Ok(())
    } else {
        Err(Failure::Nonoptimal(format!(
            "KKT residuals exceed {:.1e}",
            opts.tol
        )))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let ov = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        tol: cli.tol,
    };
    let result = match &cli.command {
        Command::Simulate { config } => load(config, &ov).and_then(|c| cmd_simulate(&c)),
        Command::Fit { config } => load(config, &ov).and_then(|c| cmd_fit(&c)),
        Command::Bound { config } => load(config, &ov).and_then(|c| cmd_bound(&c)),
        Command::Lyapunov { config } => load(config, &ov).and_then(|c| cmd_lyapunov(&c)),
        Command::Reproduce { table, quick } => cmd_reproduce(table, *quick, &ov),
        Command::Verify { problem, solution } => cmd_verify(problem, solution.as_deref(), cli.tol),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Nonoptimal(msg)) => {
            eprintln!("not optimal: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
