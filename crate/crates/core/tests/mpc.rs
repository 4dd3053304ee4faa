use cacc_core::kinematics::{build_system, PlatoonSystem, RelativeState};
use cacc_core::lp::{solve, LpStatus};
use cacc_core::mpc::*;
use cacc_core::safety::{constraint_block, BrakingSpec, ComfortSpec, ConstraintBlock, RowLabel};
use nalgebra::{Matrix2, RowVector3, Vector3};
use proptest::prelude::*;

const TS: f64 = 0.05;

fn braking() -> BrakingSpec {
    BrakingSpec::new(10.0, 10.0, 0.3).unwrap()
}

fn comfort() -> ComfortSpec {
    ComfortSpec {
        min_time_to_contact: 2.0,
        min_acceleration: -2.5,
        max_acceleration: 2.5,
        max_speed: 40.0,
    }
}

fn horizon(steps: usize) -> HorizonSpec {
    HorizonSpec {
        steps,
        sample_time: TS,
    }
}

fn blocks(x: &RelativeState, sys: &PlatoonSystem, steps: usize) -> Vec<ConstraintBlock> {
    (1..=steps)
        .map(|k| constraint_block(x, k, &braking(), &comfort(), sys).unwrap())
        .collect()
}

fn pair(x: &RelativeState, a_l: f64, w: f64, k0: RowVector3<f64>) -> (RobustLpProblem, RobustLpProblem) {
    let sys = build_system(TS, a_l, Vector3::new(0.0, w, 0.0)).unwrap();
    let b = blocks(x, &sys, 10);
    let cost = CostSpec::default();
    (
        build_nominal(x, &sys, &cost, &horizon(10), &b).unwrap(),
        build_robust(x, &sys, &cost, &horizon(10), &b, &k0).unwrap(),
    )
}

fn controller(mode: ControlMode) -> Controller {
    Controller::new(ControllerConfig {
        mode,
        cost: CostSpec::default(),
        horizon: horizon(10),
        braking: braking(),
        comfort: comfort(),
        disturbance: Vector3::new(0.0, 1.2, 0.0),
        prestabilize: false,
        max_iters: 5000,
    })
    .unwrap()
}

#[test]
fn census_scales_with_horizon() {
    for t in [1, 2, 5, 10, 15] {
        let x = RelativeState::new(20.0, 20.0, 20.0);
        let sys = build_system(TS, 0.0, Vector3::zeros()).unwrap();
        let p = build_nominal(&x, &sys, &CostSpec::default(), &horizon(t), &blocks(&x, &sys, t)).unwrap();
        let c = p.census;
        assert_eq!(c.variables, 8 * t);
        assert_eq!(c.equalities, 3 * t);
        assert_eq!(c.block_rows, 14 * t);
        assert_eq!(c.slack_sign_rows, 2 * t);
        assert_eq!(c.state_epigraph_rows, 4 * (t - 1));
        assert_eq!(c.terminal_epigraph_rows, 4);
        assert_eq!(c.input_epigraph_rows, 2 * t);
        assert_eq!(c.inequalities, 22 * t);
        assert_eq!(p.base.num_vars(), c.variables);
        assert_eq!(p.base.num_ineq(), c.inequalities);
    }
}

#[test]
fn zero_disturbance_robust_is_bitwise_nominal() {
    let x = RelativeState::new(17.0, 22.0, 24.0);
    let (nom, rob) = pair(&x, -1.0, 0.0, RowVector3::zeros());
    let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(nom.base.ineq_lhs.as_slice()), bits(rob.base.ineq_lhs.as_slice()));
    assert_eq!(bits(nom.base.ineq_rhs.as_slice()), bits(rob.base.ineq_rhs.as_slice()));
    assert_eq!(bits(nom.base.eq_lhs.as_slice()), bits(rob.base.eq_lhs.as_slice()));
    assert_eq!(bits(nom.base.eq_rhs.as_slice()), bits(rob.base.eq_rhs.as_slice()));
    assert_eq!(nom.base.objective, rob.base.objective);
    assert_eq!(nom.base.objective_constant.to_bits(), rob.base.objective_constant.to_bits());
    assert!(rob.phi_a.iter().flatten().all(|&p| p == 0.0));
    assert!(rob.phi_q.iter().flatten().chain(rob.phi_p.iter()).all(|&p| p == 0.0));
}

#[test]
fn open_loop_tightening_is_monotone_and_nonnegative() {
    let (_, rob) = pair(&RelativeState::new(30.0, 30.0, 30.0), 0.0, 1.2, RowVector3::zeros());
    let ttc = RowLabel::TimeToContact;
    let row = |label: RowLabel| RowLabel::ALL.iter().position(|&l| l == label).unwrap();
    for k in 0..10 {
        assert!(rob.phi_a[k].iter().all(|&p| p >= 0.0));
        assert!(rob.phi_a[k][row(ttc)] > 0.0, "ttc row at step {}", k + 1);
        if k >= 1 {
            for i in 0..8 {
                assert!(rob.phi_a[k][row(RowLabel::Safety(i))] > 0.0, "safety_{i} at step {}", k + 1);
            }
            // ttc, speed and input rows have step-independent coefficients
            for label in [ttc, RowLabel::EgoSpeedLower, RowLabel::EgoSpeedUpper, RowLabel::BrakeCapacity] {
                assert!(rob.phi_a[k][row(label)] >= rob.phi_a[k - 1][row(label)]);
            }
        }
    }
    for k in 1..rob.phi_q.len() {
        assert!(rob.phi_q[k].iter().zip(&rob.phi_q[k - 1]).all(|(a, b)| a >= b));
    }
    // ttc row: 2.4 k + 0.03 k (k - 1)
    for k in 1..=10 {
        let kf = k as f64;
        assert!((rob.phi_a[k - 1][row(ttc)] - (2.4 * kf + 0.03 * kf * (kf - 1.0))).abs() < 1e-9);
    }
}

#[test]
fn prestabilized_controllable_channel_stops_growing() {
    let sys = build_system(TS, 0.0, Vector3::new(0.0, 0.0, 1.0)).unwrap();
    let k0 = synth_nilpotent(&sys).unwrap();
    let x = RelativeState::new(30.0, 30.0, 30.0);
    let b = blocks(&x, &sys, 10);
    let rob = build_robust(&x, &sys, &CostSpec::default(), &horizon(10), &b, &k0).unwrap();
    let ttc = 2;
    for k in 3..10 {
        assert!((rob.phi_a[k][ttc] - rob.phi_a[2][ttc]).abs() < 1e-9);
        assert!((rob.phi_a[k][3] - rob.phi_a[2][3]).abs() < 1e-9, "brake row");
    }
    for k in 3..rob.phi_q.len() {
        for (a, b) in rob.phi_q[k].iter().zip(&rob.phi_q[2]) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn nilpotent_gain_properties() {
    for ts in [0.01, 0.05, 0.1, 0.5] {
        let sys = build_system(ts, 0.0, Vector3::zeros()).unwrap();
        let k = synth_nilpotent(&sys).unwrap();
        assert_eq!(k[1], 0.0);
        let f = Matrix2::new(1.0, -ts, 0.0, 1.0);
        let g = nalgebra::Vector2::new(-0.5 * ts * ts, ts);
        let cl = f - g * nalgebra::RowVector2::new(k[0], k[2]);
        assert!((cl * cl).amax() < 1e-10, "ts {ts}");
        let full = sys.f - sys.g * k;
        // v_l stays an uncontrollable unit mode
        assert_eq!(full.row(1), RowVector3::new(0.0, 1.0, 0.0));
    }
}

#[test]
fn epigraph_variables_are_tight_at_optimum() {
    for x in [
        RelativeState::new(15.0, 15.0, 15.0),
        RelativeState::new(40.0, 30.0, 28.0),
        RelativeState::new(12.0, 20.0, 21.0),
    ] {
        let (nom, _) = pair(&x, 0.5, 1.2, RowVector3::zeros());
        let sol = solve(&nom.base, 5000).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let l = nom.layout;
        let cost = CostSpec::default();
        for k in 1..=10 {
            let xk = Vector3::new(sol.z[l.x(k, 0)], sol.z[l.x(k, 1)], sol.z[l.x(k, 2)]);
            let w = if k == 10 { &cost.terminal } else { &cost.q };
            let norm = (w * nalgebra::DVector::from_column_slice(xk.as_slice())).amax();
            assert!((sol.z[l.eps_x(k)] - norm).abs() < 1e-6 * (1.0 + norm), "eps_x{k}");
        }
        for k in 0..10 {
            let norm = sol.z[l.u(k)].abs();
            assert!((sol.z[l.eps_u(k)] - norm).abs() < 1e-6 * (1.0 + norm), "eps_u{k}");
        }
    }
}

#[test]
fn equilibrium_needs_no_input() {
    let mut c = controller(ControlMode::Nominal);
    let d = c.control_step(&RelativeState::new(0.0, 0.0, 0.0), 0.0).unwrap();
    assert_eq!(d.status, LpStatus::Optimal);
    assert!(d.u.abs() <= 1e-6);
    assert!(d.objective.abs() <= 1e-6);
}

#[test]
fn large_gap_closes_in() {
    let mut c = controller(ControlMode::Nominal);
    let d = c.control_step(&RelativeState::new(60.0, 25.0, 25.0), 0.0).unwrap();
    assert_eq!(d.status, LpStatus::Optimal);
    assert!(d.u > 0.0);
    assert_eq!(d.predicted.len(), 11);
    assert!(d.predicted[10].distance < 60.0);
}

#[test]
fn robust_brakes_earlier_when_lead_decelerates() {
    let x = RelativeState::new(30.0, 30.0, 30.0);
    let nominal = controller(ControlMode::Nominal).control_step(&x, -6.0).unwrap();
    let robust = controller(ControlMode::Robust).control_step(&x, -6.0).unwrap();
    assert_eq!(nominal.status, LpStatus::Optimal);
    assert_eq!(robust.status, LpStatus::Optimal);
    assert!(robust.u < nominal.u, "robust {} nominal {}", robust.u, nominal.u);
}

#[test]
fn infeasible_problem_falls_back_to_full_braking() {
    // stopped lead: the lead-speed uncertainty keeps the tightened ttc row out of reach
    let mut c = controller(ControlMode::Robust);
    let d = c.control_step(&RelativeState::new(10.0, 0.0, 0.0), 0.0).unwrap();
    assert_eq!(d.status, LpStatus::Infeasible);
    assert!(d.fallback);
    assert_eq!(d.u, -10.0);
    assert_eq!(c.infeasible_solves(), 1);
}

#[test]
fn active_flags_line_up_with_rows() {
    let mut c = controller(ControlMode::Nominal);
    let d = c.control_step(&RelativeState::new(15.0, 15.0, 15.0), 0.0).unwrap();
    let names = c.row_names();
    assert_eq!(names.len(), d.active.len());
    // accelerating at the comfort limit on the first step
    let i = names.iter().position(|n| n == "blk0.comfort_upper").unwrap();
    assert!(d.active[i]);
    assert!((d.u - 2.5).abs() < 1e-7);
}

#[test]
fn shift_consistency_without_disturbance() {
    // a large gap keeps only the comfort bound active for the whole plan, so
    // re-solving from the predicted successor reproduces the shifted plan
    let mut c = controller(ControlMode::Nominal);
    let x0 = RelativeState::new(80.0, 25.0, 25.0);
    let first = c.control_step(&x0, 0.0).unwrap();
    let second = c.control_step(&first.predicted[1], 0.0).unwrap();
    let plan_u1 = {
        let p = c.problem(&x0, 0.0).unwrap();
        let sol = solve(&p.base, 5000).unwrap();
        p.input(&x0, &sol.z, 1)
    };
    assert!((second.u - plan_u1).abs() < 1e-6, "{} vs {}", second.u, plan_u1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn robust_feasible_set_is_nested_and_costlier(
        d in 5.0..80.0f64,
        v_l in 5.0..38.0f64,
        dv in -4.0..4.0f64,
        a_l in -3.0..2.0f64,
    ) {
        let v_e = (v_l + dv).clamp(0.0, 40.0);
        let x = RelativeState::new(d, v_l, v_e);
        let (nom, rob) = pair(&x, a_l, 1.2, RowVector3::zeros());
        let sn = solve(&nom.base, 5000).unwrap();
        let sr = solve(&rob.base, 5000).unwrap();
        if sr.status == LpStatus::Optimal {
            prop_assert_eq!(sn.status, LpStatus::Optimal);
            prop_assert!(sr.objective_value >= sn.objective_value - 1e-6);
            // the robust point is itself nominal-feasible
            prop_assert!(cacc_core::check_solution(&nom.base, &sr.z).unwrap().within_tolerance(&nom.base));
        }
    }

    #[test]
    fn optimal_commands_respect_brake_capacity(
        d in 0.0..60.0f64,
        v_l in 0.0..40.0f64,
        v_e in 0.0..40.0f64,
        a_l in -10.0..2.0f64,
    ) {
        let mut c = controller(ControlMode::Nominal);
        let dec = c.control_step(&RelativeState::new(d, v_l, v_e), a_l).unwrap();
        if dec.status == LpStatus::Optimal {
            prop_assert!(dec.u >= -10.0 - 1e-7);
        } else {
            prop_assert!(dec.fallback);
            prop_assert_eq!(dec.u, -10.0);
        }
    }
}
