use ddtmpc::equilibria::{is_equilibrium, BoxSet, TargetSetpoint};
use ddtmpc::hankel::{generate_data, trajectory_membership, DataTrajectory};
use ddtmpc::lti::{four_tank, Trajectory};
use ddtmpc::mpc::{Controller, History, MpcConfig, MpcSolution};
use ddtmpc::qp::{QpSettings, QpStatus};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn config() -> MpcConfig {
    let u_box = BoxSet::new(v(&[-1.2, -2.0]), v(&[1.2, 2.0])).unwrap();
    let y_box = BoxSet::new(v(&[0.0, 0.0]), v(&[1.2, 1.2])).unwrap();
    MpcConfig {
        horizon: 24,
        order: 4,
        q: DMatrix::identity(2, 2) * 5.0,
        r: DMatrix::identity(2, 2),
        s: DMatrix::identity(2, 2) * 0.5,
        t: DMatrix::identity(2, 2) * 200.0,
        u_s_box: u_box.scaled(0.99).unwrap(),
        y_s_box: y_box.scaled(0.99).unwrap(),
        u_box,
        y_box,
        alpha_reg: 1e-4,
        solver: QpSettings::default(),
    }
}

fn data() -> DataTrajectory {
    generate_data(&four_tank(), &v(&[-1.0, -1.0]), &v(&[1.0, 1.0]), 100, 42).unwrap()
}

#[test]
fn cost_matches_scalar_loops() {
    let ctrl = Controller::validate(data(), config()).unwrap();
    let target = TargetSetpoint::new(v(&[0.3, -0.2]), v(&[1.0, 0.7]));
    let hist = History::constant(&v(&[0.1, 0.2]), &v(&[0.3, 0.4]), 4);
    let prob = ctrl.build_problem(&hist, &target).unwrap();
    let ly = prob.layout;
    let cfg = ctrl.config();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let z = DVector::from_fn(ly.len(), |_, _| rng.gen_range(-2.0..2.0));
        let at = |i: usize| z[i];
        let weighted = |w: &DMatrix<f64>, a: usize, b: usize, d: usize, off: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let xi = at(a + i) - if b == usize::MAX { off[i] } else { at(b + i) };
                    let xj = at(a + j) - if b == usize::MAX { off[j] } else { at(b + j) };
                    acc += xi * w[(i, j)] * xj;
                }
            }
            acc
        };
        let mut expect = 0.0;
        for k in 0..=ly.horizon {
            expect += weighted(&cfg.r, ly.u_bar(k).start, ly.u_s().start, 2, &[]);
            expect += weighted(&cfg.q, ly.y_bar(k).start, ly.y_s().start, 2, &[]);
        }
        expect += weighted(&cfg.s, ly.u_s().start, usize::MAX, 2, &[0.3, -0.2]);
        expect += weighted(&cfg.t, ly.y_s().start, usize::MAX, 2, &[1.0, 0.7]);
        for i in ly.alpha() {
            expect += cfg.alpha_reg * at(i) * at(i);
        }
        let got = prob.cost(&z);
        assert!(
            (got - expect).abs() <= 1e-10 * expect.abs().max(1.0),
            "{got} vs {expect}"
        );
    }
}

fn shifted_window(prev: &MpcSolution) -> Trajectory {
    let mut u: Vec<_> = prev.u_pred[1..].to_vec();
    let mut y: Vec<_> = prev.y_pred[1..].to_vec();
    u.push(prev.u_s.clone());
    y.push(prev.y_s.clone());
    Trajectory::new(u, y).unwrap()
}

#[test]
fn closed_loop_step_properties() {
    let plant = four_tank();
    let data = data();
    let mut ctrl = Controller::validate(data.clone(), config()).unwrap();
    ctrl.set_target(TargetSetpoint::new(v(&[1.0, 1.8]), v(&[1.0, 1.0])))
        .unwrap();
    let mut x = DVector::zeros(4);
    let mut hist = History::constant(&v(&[0.0, 0.0]), &v(&[0.0, 0.0]), 4);
    let mut ratios = Vec::new();
    for t in 0..40 {
        if let Some(prev) = ctrl.previous() {
            assert!(
                ctrl.candidate_violation(prev, &hist).unwrap() <= 1e-6,
                "step {t}"
            );
            let res = trajectory_membership(&data, &shifted_window(prev), 4)
                .unwrap()
                .residual;
            assert!(res <= 1e-8, "step {t}: shifted window residual {res}");
        }
        let cold = ctrl
            .solve_with(&hist, ctrl.target().unwrap(), None)
            .unwrap();
        let (u, sol) = ctrl.solve_step(&hist).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((&u - &cold.u_pred[4]).amax() <= 1e-6, "step {t}");
        if t > 0 {
            ratios.push(sol.iterations as f64 / cold.iterations as f64);
        }
        let eq = is_equilibrium(&data, sol.u_at(24), sol.y_at(24), 4).unwrap();
        assert!(
            eq.is_equilibrium,
            "step {t}: terminal residual {}",
            eq.residual
        );
        for k in 20..=24 {
            assert!((sol.u_at(k) - sol.u_at(24)).amax() <= 1e-7);
        }
        let (next, y) = plant.step(&x, &u).unwrap();
        hist.push(u, y);
        x = next;
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    assert!(median <= 0.25, "median warm/cold iteration ratio {median}");
}

#[test]
fn setting_the_same_target_changes_nothing_and_new_targets_stay_feasible() {
    let plant = four_tank();
    let mut a = Controller::validate(data(), config()).unwrap();
    let mut b = Controller::validate(data(), config()).unwrap();
    let target = TargetSetpoint::new(v(&[1.0, 1.8]), v(&[1.0, 1.0]));
    a.set_target(target.clone()).unwrap();
    b.set_target(target.clone()).unwrap();
    let mut x = DVector::zeros(4);
    let mut hist = History::constant(&v(&[0.0, 0.0]), &v(&[0.0, 0.0]), 4);
    for t in 0..8 {
        if t == 3 {
            b.set_target(target.clone()).unwrap();
        }
        let (ua, sa) = a.solve_step(&hist).unwrap();
        let (_, sb) = b.solve_step(&hist).unwrap();
        assert!((&sa.z - &sb.z).amax() <= 1e-9, "step {t}");
        let (next, y) = plant.step(&x, &ua).unwrap();
        hist.push(ua, y);
        x = next;
    }
    for y_t in [[0.3, 0.5], [1.5, 1.5], [0.0, 1.2]] {
        a.set_target(TargetSetpoint::new(v(&[0.0, 0.0]), v(&y_t)))
            .unwrap();
        let (u, sol) = a.solve_step(&hist).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let (next, y) = plant.step(&x, &u).unwrap();
        hist.push(u, y);
        x = next;
    }
}
