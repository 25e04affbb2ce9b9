mod common;

use koopsos::auxfn::{bound_program, BoundOptions};
use koopsos::experiments::{logistic_bound, logistic_dictionaries, logistic_set, vdp_upper};
use koopsos::sdp::SolverOptions;
use koopsos::sos::{self, squared_norm};
use koopsos::{Basis, Direction, LieSource, Poly, SdpStatus, SystemSpec};
use rand::Rng;

fn exact(system: SystemSpec) -> LieSource {
    LieSource::Exact { system }
}

#[test]
fn logistic_exact_bounds_tighten_with_degree() {
    let solver = SolverOptions::default();
    let (mut prev_u, mut prev_l) = (f64::INFINITY, f64::NEG_INFINITY);
    for alpha in [2, 4, 6] {
        let u = logistic_bound(
            Direction::Upper,
            &exact(SystemSpec::logistic()),
            alpha,
            &solver,
        )
        .unwrap();
        let l = logistic_bound(
            Direction::Lower,
            &exact(SystemSpec::logistic()),
            alpha,
            &solver,
        )
        .unwrap();
        assert_eq!(u.status, SdpStatus::Optimal);
        assert_eq!(l.status, SdpStatus::Optimal);
        assert!(
            u.bound <= prev_u + 1e-6,
            "alpha {alpha}: {} > {prev_u}",
            u.bound
        );
        assert!(
            l.bound >= prev_l - 1e-6,
            "alpha {alpha}: {} < {prev_l}",
            l.bound
        );
        assert!(l.bound <= u.bound);
        (prev_u, prev_l) = (u.bound, l.bound);
    }
}

#[test]
fn certificates_are_nonnegative_at_random_points() {
    let solver = SolverOptions::default();
    let mut r = common::rng(11);
    let mut cases = Vec::new();
    for dir in [Direction::Upper, Direction::Lower] {
        let b = logistic_bound(dir, &exact(SystemSpec::logistic()), 4, &solver).unwrap();
        cases.push((b, vec![[0.0, 1.0]]));
    }
    let b = vdp_upper(&exact(SystemSpec::van_der_pol()), 4, &solver).unwrap();
    cases.push((b, vec![[-2.5, 2.5]; 2]));
    for (b, bounds) in cases {
        let cert = b
            .certificate
            .expect("optimal bound carries its certificate");
        for _ in 0..1000 {
            let x: Vec<f64> = bounds
                .iter()
                .map(|[lo, hi]| lo + (hi - lo) * r.random::<f64>())
                .collect();
            let v = cert.evaluate(&x).unwrap();
            assert!(v >= -1e-6, "certificate {v} at {x:?}");
        }
    }
}

#[test]
fn gram_matrices_reproduce_the_certificate() {
    let (phi, _) = logistic_dictionaries(4);
    let g = Poly::monomial_term(Basis::monomial(1), koopsos::MultiIndex::new(vec![1]), 1.0)
        .convert(phi.basis());
    let prog = bound_program(
        Direction::Upper,
        &g,
        &exact(SystemSpec::logistic()),
        &phi,
        &logistic_set().unwrap(),
        &BoundOptions::default(),
    )
    .unwrap();
    let compiled = sos::compile(&prog).unwrap();
    let sol = sos::solve(&prog, &SolverOptions::default()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    let cert = sos::certificate_poly(&prog, &sol, 0).unwrap();
    for k in 0..=20 {
        let x = [k as f64 / 20.0];
        let gram = sos::gram_value(&prog, &sol, &compiled.layout, 0, &x).unwrap();
        assert!((gram - cert.evaluate(&x).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn constant_average_is_recovered_from_both_sides() {
    let basis = Basis::monomial(2);
    let phi = koopsos::Dictionary::total_degree(basis.clone(), 2);
    let g = Poly::constant(basis.clone(), -1.5);
    for dir in [Direction::Upper, Direction::Lower] {
        let b = koopsos::ergodic_bound(
            dir,
            &g,
            &exact(SystemSpec::van_der_pol()),
            &phi,
            &koopsos::SemialgebraicSet::whole_space(),
            &BoundOptions::default(),
        )
        .unwrap();
        assert!((b.bound + 1.5).abs() < 1e-6, "{dir:?}: {}", b.bound);
    }
    // and a nonconstant g is bounded above by its maximum on the set
    let u = koopsos::ergodic_bound(
        Direction::Upper,
        &squared_norm(&Basis::monomial(1)).scale(-1.0),
        &exact(SystemSpec::logistic()),
        &koopsos::Dictionary::total_degree(Basis::monomial(1), 2),
        &koopsos::SemialgebraicSet::new(vec![Poly::from_monomials(
            Basis::monomial(1),
            &[(vec![1], 1.0), (vec![2], -1.0)],
        )])
        .unwrap(),
        &BoundOptions::default(),
    )
    .unwrap();
    assert!(u.bound <= 1e-6);
}
