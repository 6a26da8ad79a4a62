use acc_core::{VehicleParams64, VehicleState64};
use acc_sim::{plant_step, run_scenario, CommandMode, Outcome, Scenario};
use proptest::prelude::*;

proptest! {
    #[test]
    fn plant_respects_actuator_limits(
        delta in -0.5f64..0.5,
        v in 0.0f64..10.0,
        a_prev in -4.0f64..2.0,
        delta_des in -3.0f64..3.0,
        v_cmd in -2.0f64..15.0,
    ) {
        let p = VehicleParams64::passenger_car();
        let dt = 0.05;
        let z = VehicleState64::new(0.0, 0.0, 0.0, delta, v);
        let out = plant_step(&z, a_prev, delta_des, v_cmd, &p, dt).unwrap();
        let eps = 1e-12;
        prop_assert!(out.state.delta.abs() <= p.delta_max + eps);
        prop_assert!((out.state.delta - delta).abs() <= p.ddelta_max * dt + eps);
        prop_assert!(out.state.v >= 0.0);
        prop_assert!(out.input.accel >= p.a_min - eps && out.input.accel <= p.a_max + eps);
        prop_assert!((out.input.accel - a_prev).abs() <= p.j_max * dt + eps);
        prop_assert!(out.state.theta > -std::f64::consts::PI && out.state.theta <= std::f64::consts::PI);
    }
}

fn straight(extra: &str) -> Scenario {
    let text = format!(
        "schema_version = 1\nname = \"s\"\nduration = 3.0\n[operator]\nv_ref = 3.0\n\
         [path]\npoints = [[-10.0, 0.0], [100.0, 0.0]]\n[start]\nv = 3.0\n{extra}"
    );
    Scenario::from_toml(&text, "s.toml", &[]).unwrap()
}

#[test]
fn collision_outcome_matches_clearance() {
    let overlapping = straight("[[obstacles]]\ncenter = [1.0, 0.0]\nsize = [1.0, 1.0]\n");
    let run = run_scenario(&overlapping, CommandMode::Scripted).unwrap();
    assert_eq!(run.outcome, Outcome::Collision);
    assert!(run.log.min_clearance() <= 0.0);

    let clear = straight("[[obstacles]]\ncenter = [40.0, 6.0]\nsize = [1.0, 1.0]\n");
    let run = run_scenario(&clear, CommandMode::Scripted).unwrap();
    assert_ne!(run.outcome, Outcome::Collision);
    assert!(run.log.min_clearance() > 0.0);
    let ts = clear.cfg.sample_time;
    for (k, r) in run.log.rows.iter().enumerate() {
        assert!((r.t - k as f64 * ts).abs() < 1e-9);
    }
}
