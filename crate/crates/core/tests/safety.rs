use cacc_core::kinematics::{build_system, RelativeState};
use cacc_core::safety::*;
use nalgebra::Vector3;
use proptest::prelude::*;

fn spec(a_e: f64, a_l: f64, phi: f64) -> BrakingSpec {
    BrakingSpec::new(a_e, a_l, phi).unwrap()
}

fn comfort() -> ComfortSpec {
    ComfortSpec {
        min_time_to_contact: 2.0,
        min_acceleration: -2.5,
        max_acceleration: 2.5,
        max_speed: 40.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn closed_form_matches_oracle(
        v_e in 0.0..40.0f64,
        v_l in 0.0..40.0f64,
        a_e in 4.0..12.0f64,
        a_l in 4.0..12.0f64,
        phi in 0.0..0.5f64,
    ) {
        let s = spec(a_e, a_l, phi);
        let closed = min_safe_distance(v_e, v_l, &s).unwrap();
        let oracle = min_safe_distance_oracle(v_e, v_l, &s, 1e-3).unwrap();
        prop_assert!((closed - oracle).abs() < 1e-4, "closed {closed} oracle {oracle}");
    }

    #[test]
    fn monotone_in_speeds_and_delay(
        v_e in 0.0..39.0f64,
        v_l in 0.5..40.0f64,
        a_e in 4.0..12.0f64,
        a_l in 4.0..12.0f64,
        phi in 0.0..0.45f64,
    ) {
        let s = spec(a_e, a_l, phi);
        let d = min_safe_distance(v_e, v_l, &s).unwrap();
        prop_assert!(min_safe_distance(v_e + 1.0, v_l, &s).unwrap() >= d - 1e-12);
        prop_assert!(min_safe_distance(v_e, v_l - 0.5, &s).unwrap() >= d - 1e-12);
        prop_assert!(min_safe_distance(v_e, v_l, &spec(a_e, a_l, phi + 0.05)).unwrap() >= d - 1e-12);
        prop_assert!(min_safe_distance(v_e, v_l, &spec(a_e, a_l + 0.5, phi)).unwrap() >= d - 1e-12);
    }

    #[test]
    fn convex_in_ego_speed(
        v_a in 0.0..40.0f64,
        v_b in 0.0..40.0f64,
        v_l in 0.0..40.0f64,
        a_e in 4.0..12.0f64,
        a_l in 4.0..12.0f64,
        phi in 0.0..0.5f64,
    ) {
        let s = spec(a_e, a_l, phi);
        let mid = min_safe_distance(0.5 * (v_a + v_b), v_l, &s).unwrap();
        let avg = 0.5 * (min_safe_distance(v_a, v_l, &s).unwrap() + min_safe_distance(v_b, v_l, &s).unwrap());
        prop_assert!(mid <= avg + 1e-9);
    }

    #[test]
    fn linearization_is_conservative(
        v_l in 0.0..40.0f64,
        a_l in -10.0..3.0f64,
        step in 1usize..=10,
        a_e in 4.0..12.0f64,
        a_lb in 4.0..12.0f64,
        phi in 0.0..0.5f64,
    ) {
        let s = spec(a_e, a_lb, phi);
        let t = step as f64 * 0.05;
        let lin = linearize_safety(v_l, a_l, t, &s, 40.0).unwrap();
        let v_pred = (v_l + a_l * t).max(0.0);
        for i in 0..=400 {
            let v_e = 40.0 * i as f64 / 400.0;
            let truth = min_safe_distance(v_e, v_pred, &s).unwrap();
            prop_assert!(lin.bound(v_e) >= truth - 1e-9, "v_e {v_e}: bound {} < {truth}", lin.bound(v_e));
        }
        for &p in &lin.knots {
            let truth = min_safe_distance(p, v_pred, &s).unwrap();
            prop_assert!((lin.bound(p) - truth).abs() < 1e-9);
        }
    }

    #[test]
    fn block_rows_match_scalar_inequalities(
        d in 0.0..60.0f64,
        v_l in 0.0..40.0f64,
        v_e in -5.0..45.0f64,
        u in -12.0..4.0f64,
        s in -3.0..3.0f64,
        a_l in -5.0..3.0f64,
        step in 1usize..=10,
    ) {
        let braking = spec(10.0, 10.0, 0.3);
        let c = comfort();
        let sys = build_system(0.05, a_l, Vector3::zeros()).unwrap();
        let x = RelativeState::new(d, v_l, v_e);
        let blk = constraint_block(&x, step, &braking, &c, &sys).unwrap();
        let r = blk.residual(&x, u, s);
        let lin = linearize_safety(v_l, a_l, step as f64 * 0.05, &braking, c.max_speed).unwrap();
        let expect = |label: RowLabel| -> f64 {
            match label {
                RowLabel::EgoSpeedLower => -v_e,
                RowLabel::EgoSpeedUpper => v_e - c.max_speed,
                RowLabel::TimeToContact => -d + c.min_time_to_contact * (v_e - v_l),
                RowLabel::BrakeCapacity => -u - braking.ego_braking,
                RowLabel::ComfortLower => c.min_acceleration - (u + s),
                RowLabel::ComfortUpper => (u + s) - c.max_acceleration,
                RowLabel::Safety(i) => -d + lin.f[i as usize] + lin.g[i as usize] * v_e,
            }
        };
        for label in RowLabel::ALL {
            let row = blk.row_of(label);
            prop_assert!((r[row] - expect(label)).abs() < 1e-9, "{}", label.name());
        }
    }
}

#[test]
fn required_delay_inverts_distance() {
    for v in [5.0, 25.0, 35.0] {
        let phi = required_delay_for_clearance(9.45, v).unwrap();
        // at equal speeds and equal braking the distance is v * phi
        let d = min_safe_distance(v, v, &spec(9.0, 9.0, phi)).unwrap();
        assert!((d - 9.45).abs() < 1e-9);
    }
}

#[test]
fn safety_rows_hold_when_distance_is_safe() {
    let braking = spec(10.0, 10.0, 0.3);
    let sys = build_system(0.05, -1.0, Vector3::zeros()).unwrap();
    for &(v_l, v_e) in &[(10.0, 12.0), (30.0, 30.0), (0.0, 5.0), (35.0, 20.0)] {
        let x = RelativeState::new(0.0, v_l, v_e);
        let blk = constraint_block(&x, 1, &braking, &comfort(), &sys).unwrap();
        // the tightest safety row gives the chord bound; at that distance all safety rows hold
        let bound = (0..8)
            .map(|i| blk.c[6 + i] + blk.a[(6 + i, 2)] * v_e)
            .fold(f64::NEG_INFINITY, f64::max);
        let at_bound = RelativeState::new(bound, v_l, v_e);
        let r = blk.residual(&at_bound, 0.0, 0.0);
        assert!((6..14).all(|i| r[i] <= 1e-12));
        let predicted = min_safe_distance(v_e, (v_l - 0.05_f64).max(0.0), &braking).unwrap();
        assert!(bound >= predicted - 1e-9);
    }
}
