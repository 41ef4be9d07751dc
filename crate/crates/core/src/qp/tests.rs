use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn free(n: usize) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_element(n, f64::NEG_INFINITY),
        DVector::from_element(n, f64::INFINITY),
    )
}

fn no_eq(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    (DMatrix::zeros(0, n), DVector::zeros(0))
}

/// Strictly convex problem with equality rows and a box, feasible by construction.
fn random_problem(seed: u64, n: usize, meq: usize) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n + 5, n, |_, _| rng.gen_range(-1.0..1.0));
    let p = m.tr_mul(&m) + DMatrix::identity(n, n) * 0.1;
    let q = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let a = DMatrix::from_fn(meq, n, |_, _| rng.gen_range(-1.0..1.0));
    let z0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let b = &a * &z0;
    QpProblem::new(
        p,
        q,
        a,
        b,
        DVector::from_element(n, -1.0),
        DVector::from_element(n, 1.0),
    )
    .unwrap()
}

#[test]
fn identity_without_constraints_gives_origin() {
    let (l, u) = free(3);
    let (a, b) = no_eq(3);
    let prob = QpProblem::new(DMatrix::identity(3, 3), DVector::zeros(3), a, b, l, u).unwrap();
    let sol = solve_qp(&prob, &QpSettings::default(), None);
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!(sol.z.amax() <= 1e-10);
    assert!(sol.objective.abs() <= 1e-12);
}

#[test]
fn clipped_scalar_optimum() {
    // (z - 3)^2 = z^2 - 6z + 9, so P = 2, q = -6.
    let (a, b) = no_eq(1);
    let prob = QpProblem::new(
        DMatrix::from_element(1, 1, 2.0),
        DVector::from_element(1, -6.0),
        a,
        b,
        DVector::from_element(1, f64::NEG_INFINITY),
        DVector::from_element(1, 1.0),
    )
    .unwrap();
    let sol = solve_qp(&prob, &QpSettings::default(), None);
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.z[0] - 1.0).abs() <= 1e-10, "{}", sol.z[0]);
    // Multiplier: 2z - 6 + nu = 0 at z = 1 gives nu = 4.
    assert!((sol.y_bound[0] - 4.0).abs() <= 1e-8);
}

#[test]
fn hand_equality_problem() {
    let prob = QpProblem::new(
        DMatrix::identity(2, 2) * 2.0,
        DVector::from_vec(vec![-2.0, -4.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_vec(vec![1.0]),
        DVector::from_element(2, f64::NEG_INFINITY),
        DVector::from_vec(vec![f64::INFINITY, 0.5]),
    )
    .unwrap();
    let sol = solve_qp(&prob, &QpSettings::default(), None);
    assert_eq!(sol.status, QpStatus::Optimal);
    assert!((sol.z[0] - 0.5).abs() <= 1e-9 && (sol.z[1] - 0.5).abs() <= 1e-9);
    assert!((sol.y_eq[0] - 1.0).abs() <= 1e-7);
    assert!((sol.y_bound[1] - 2.0).abs() <= 1e-7);
    assert!(sol.residuals.max() <= 1e-8);
}

#[test]
fn construction_rejects_bad_input() {
    let (a, b) = no_eq(2);
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    let (l, u) = free(2);
    assert!(QpProblem::new(
        asym,
        DVector::zeros(2),
        a.clone(),
        b.clone(),
        l.clone(),
        u.clone()
    )
    .is_err());
    let inverted = QpProblem::new(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        a.clone(),
        b.clone(),
        DVector::from_element(2, 1.0),
        DVector::from_element(2, 0.0),
    );
    assert!(inverted.is_err());
    assert!(QpProblem::new(DMatrix::identity(3, 3), DVector::zeros(2), a, b, l, u).is_err());
}

#[test]
fn random_problems_meet_kkt_tolerance() {
    for seed in 0..20 {
        let prob = random_problem(seed, 30, 8);
        let sol = solve_qp(&prob, &QpSettings::default(), None);
        assert_eq!(sol.status, QpStatus::Optimal, "seed {seed}");
        assert!(
            sol.residuals.max() <= 1e-8,
            "seed {seed}: {:?}",
            sol.residuals
        );
        assert!(prob.constraint_violation(&sol.z) <= 1e-8);
    }
}

#[test]
fn warm_restart_of_identical_problem_is_immediate() {
    for seed in 0..10 {
        let prob = random_problem(100 + seed, 30, 8);
        let cold = solve_qp(&prob, &QpSettings::default(), None);
        let warm = solve_qp(
            &prob,
            &QpSettings::default(),
            Some(&WarmStart::from_solution(&cold)),
        );
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!(
            warm.iterations <= 5,
            "seed {seed}: {} iterations",
            warm.iterations
        );
        assert!((&warm.z - &cold.z).amax() <= 1e-8);
    }
}

#[test]
fn argmin_is_invariant_to_cost_scaling() {
    for seed in 0..10 {
        let prob = random_problem(200 + seed, 25, 5);
        let scaled = QpProblem::new(
            prob.p() * 10.0,
            prob.q() * 10.0,
            prob.a().clone(),
            prob.b().clone(),
            prob.lower().clone(),
            prob.upper().clone(),
        )
        .unwrap();
        let s = QpSettings::default();
        let z1 = solve_qp(&prob, &s, None).z;
        let z2 = solve_qp(&scaled, &s, None).z;
        assert!((&z1 - &z2).amax() <= 1e-7, "seed {seed}");
    }
}

#[test]
fn different_warm_starts_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..10 {
        let prob = random_problem(300 + seed, 20, 4);
        let w1 = WarmStart::primal(DVector::from_fn(20, |_, _| rng.gen_range(-3.0..3.0)));
        let w2 = WarmStart::primal(DVector::from_fn(20, |_, _| rng.gen_range(-3.0..3.0)));
        let s = QpSettings::default();
        let z1 = solve_qp(&prob, &s, Some(&w1)).z;
        let z2 = solve_qp(&prob, &s, Some(&w2)).z;
        assert!((&z1 - &z2).amax() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn solving_is_deterministic() {
    let prob = random_problem(5, 30, 8);
    let a = solve_qp(&prob, &QpSettings::default(), None);
    let b = solve_qp(&prob, &QpSettings::default(), None);
    assert_eq!(a, b);
}

#[test]
fn redundant_equality_rows_are_handled() {
    // Rows 2 and 3 duplicate row 1; the KKT matrix is singular.
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    let b = DVector::from_vec(vec![1.0, 1.0, 2.0]);
    let (l, u) = free(3);
    let prob = QpProblem::new(DMatrix::identity(3, 3), DVector::zeros(3), a, b, l, u).unwrap();
    let sol = solve_qp(&prob, &QpSettings::default(), None);
    assert_eq!(sol.status, QpStatus::Optimal);
    for i in 0..3 {
        assert!((sol.z[i] - 1.0 / 3.0).abs() <= 1e-9);
    }
    assert!(sol.residuals.max() <= 1e-8);
}

#[test]
fn primal_infeasibility_is_detected() {
    // z1 + z2 = 3 with both in [0, 1].
    let prob = QpProblem::new(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_vec(vec![3.0]),
        DVector::zeros(2),
        DVector::from_element(2, 1.0),
    )
    .unwrap();
    let sol = solve_qp(&prob, &QpSettings::default(), None);
    assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    assert!(sol.clone().into_result().is_err());
}

#[test]
fn dual_infeasibility_is_detected() {
    // Linear cost unbounded below along z1.
    let (a, b) = no_eq(2);
    let prob = QpProblem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        DVector::from_vec(vec![-1.0, 0.0]),
        a,
        b,
        DVector::from_element(2, f64::NEG_INFINITY),
        DVector::from_element(2, f64::INFINITY),
    )
    .unwrap();
    let sol = solve_qp(&prob, &QpSettings::default(), None);
    assert_eq!(sol.status, QpStatus::DualInfeasible);
}

#[test]
fn iteration_budget_is_reported() {
    let prob = random_problem(11, 30, 8);
    let settings = QpSettings {
        max_iter: 3,
        polish: false,
        ..QpSettings::default()
    };
    let sol = solve_qp(&prob, &settings, None);
    assert_eq!(sol.status, QpStatus::MaxIterations);
    assert_eq!(sol.iterations, 3);
    assert!(sol.z.iter().all(|v| v.is_finite()));
}

#[test]
fn dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("qp.txt");
    let mut prob = random_problem(1, 6, 2);
    let mut upper = prob.upper().clone();
    upper[3] = f64::INFINITY;
    prob = QpProblem::new(
        prob.p().clone(),
        prob.q().clone(),
        prob.a().clone(),
        prob.b().clone(),
        prob.lower().clone(),
        upper,
    )
    .unwrap()
    .with_blocks(vec![
        VariableBlock {
            name: "head".into(),
            start: 0,
            len: 2,
        },
        VariableBlock {
            name: "tail".into(),
            start: 2,
            len: 4,
        },
    ]);
    write_problem(&path, &prob).unwrap();
    let back = read_problem(&path).unwrap();
    assert_eq!(back, prob);
}
