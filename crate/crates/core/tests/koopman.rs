mod common;

use koopsos::koopman::{analytic_circle_moments, divergence_indicator, moment_matrices};
use koopsos::polybasis::{Basis, Dictionary, MultiIndex, PolyInBasis};
use koopsos::systems::{sample_snapshots, Observation, SamplingMode, SystemSpec};
use proptest::prelude::*;

#[test]
fn fitted_operators_match_data_matrix_oracles() {
    for seed in 0..40 {
        let case = common::random_case(seed);
        let e = common::identity_errors(&case);
        assert!(e.max() <= 1e-9, "seed {seed}: {e:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operator_identities_hold_for_random_sets(seed in 100u64..10_000) {
        let e = common::identity_errors(&common::random_case(seed));
        prop_assert!(e.max() <= 1e-9, "{:?}", e);
    }

    #[test]
    fn restricted_moments_equal_direct_moments(seed in 0u64..1000) {
        let case = common::random_case(seed);
        // generator observations are tied to phi
        prop_assume!(case.set.kind() == koopsos::SnapshotKind::Koopman);
        let basis = case.phi.basis().clone();
        let big_phi = Dictionary::total_degree(basis.clone(), 3);
        let big_psi = Dictionary::total_degree(basis, 5);
        let big = moment_matrices(&case.set, &big_phi, &big_psi).unwrap();
        let small = big.restrict(&big_phi, &big_psi, &case.phi, &case.psi).unwrap();
        let direct = moment_matrices(&case.set, &case.phi, &case.psi).unwrap();
        prop_assert!(common::rel_err(&small.b, &direct.b) < 1e-13);
        if let (Some(a), Some(b)) = (&small.a, &direct.a) {
            prop_assert!(common::rel_err(a, b) < 1e-13);
        }
        if let (Some(a), Some(b)) = (&small.d, &direct.d) {
            prop_assert!(common::rel_err(a, b) < 1e-13);
        }
    }
}

fn circle_dictionaries() -> (Dictionary, Dictionary) {
    let basis = Basis::monomial(2);
    let mi = |e: [u32; 2]| MultiIndex::new(e.to_vec());
    let phi = Dictionary::new(basis.clone(), vec![mi([0, 0]), mi([2, 0]), mi([0, 2])]).unwrap();
    let psi = Dictionary::new(basis, vec![mi([0, 0]), mi([2, 0]), mi([1, 1]), mi([0, 2])]).unwrap();
    (phi, psi)
}

#[test]
fn divergence_indicator_vanishes_on_the_data() {
    let (phi, psi) = circle_dictionaries();
    let set = sample_snapshots(
        &SystemSpec::CircularOrbit,
        &SamplingMode::LimitCycle,
        0.05,
        300,
        0,
        Observation::Koopman,
    )
    .unwrap();
    let ops = koopsos::fit_edmd(&set, &phi, &psi).unwrap();
    for coeffs in [[1.0, 1.0, 1.0], [0.3, -2.0, 0.5], [0.0, 1.0, 0.0]] {
        let p = PolyInBasis::new(phi.clone(), coeffs.to_vec()).unwrap();
        let ind = ops.divergence_indicator(&p).unwrap();
        for i in 0..set.len() {
            assert!(ind.evaluate(set.x(i)).unwrap().abs() < 1e-8);
        }
    }
}

#[test]
fn indicator_from_analytic_circle_moments() {
    // B has the single null direction (1, -1, 0, -1), so B B^+ - I is
    // -v v^T / 3 and the indicator of 1 + x1^2 + x2^2 is (1 - x1^2 - x2^2) / 3.
    let (phi, psi) = circle_dictionaries();
    let b = analytic_circle_moments(&psi).unwrap().b;
    let expect_b = [
        [8.0, 4.0, 0.0, 4.0],
        [4.0, 3.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [4.0, 1.0, 0.0, 3.0],
    ];
    for i in 0..4 {
        for j in 0..4 {
            assert!((b[(i, j)] - expect_b[i][j] / 8.0).abs() < 1e-15);
        }
    }
    let p = PolyInBasis::new(phi.clone(), vec![1.0, 1.0, 1.0]).unwrap();
    let ind = divergence_indicator(&b, &phi, &psi, &p, 1e-12).unwrap();
    let third = 1.0 / 3.0;
    for (got, want) in ind.coeffs.iter().zip([third, -third, 0.0, -third]) {
        assert!((got - want).abs() < 1e-12, "{:?}", ind.coeffs);
    }
}

#[test]
fn pinv_satisfies_penrose_conditions_on_rank_deficient_input() {
    let mut r = common::rng(5);
    use rand::Rng;
    let u = nalgebra::DMatrix::from_fn(7, 3, |_, _| r.random::<f64>() - 0.5);
    let m = &u * u.transpose();
    let p = koopsos::pinv(&m, 1e-12).unwrap();
    assert!(common::rel_err(&(&m * &p * &m), &m) < 1e-12);
    assert!(common::rel_err(&(&p * &m * &p), &p) < 1e-10);
    let mp = &m * &p;
    assert!((&mp - mp.transpose()).norm() < 1e-10);
}
