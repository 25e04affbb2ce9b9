use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use koopsos::auxfn::{bound_program, BoundOptions};
use koopsos::experiments::{
    logistic_dictionaries, logistic_trajectory, vdp_dictionaries, vdp_trajectory,
};
use koopsos::koopman::{moment_matrices, pinv};
use koopsos::sos::squared_norm;
use koopsos::sos::{compile, LieSource, SemialgebraicSet};
use koopsos::{sdp, Direction, SystemSpec};

fn moments(c: &mut Criterion) {
    let set = logistic_trajectory(100_000, 0).unwrap();
    let (phi, psi) = logistic_dictionaries(6);
    c.bench_function("moments logistic n=1e5 beta=12", |b| {
        b.iter(|| moment_matrices(&set, &phi, &psi).unwrap())
    });
    let set = vdp_trajectory(100_000).unwrap();
    let (phi, psi) = vdp_dictionaries(6, false);
    c.bench_function("moments vdp n=1e5 beta=8", |b| {
        b.iter(|| moment_matrices(&set, &phi, &psi).unwrap())
    });
    let mm = moment_matrices(&set, &phi, &psi).unwrap();
    c.bench_function("pinv 45x45", |b| b.iter(|| pinv(&mm.b, 1e-15).unwrap()));
}

fn vdp_program(alpha: u32) -> koopsos::SosProgram {
    let (phi, _) = vdp_dictionaries(alpha, true);
    let g = squared_norm(phi.basis());
    bound_program(
        Direction::Upper,
        &g,
        &LieSource::Exact {
            system: SystemSpec::van_der_pol(),
        },
        &phi,
        &SemialgebraicSet::whole_space(),
        &BoundOptions::default(),
    )
    .unwrap()
}

fn sos(c: &mut Criterion) {
    let prog = vdp_program(8);
    c.bench_function("compile vdp alpha=8", |b| {
        b.iter(|| compile(&prog).unwrap())
    });
    let problem = compile(&prog).unwrap().problem;
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("sdp vdp alpha=8", |b| {
        b.iter_batched(
            || problem.clone(),
            |p| sdp::solve(&p, &sdp::SolverOptions::default()).unwrap(),
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, moments, sos);
criterion_main!(benches);
