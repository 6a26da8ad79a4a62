use acc_core::{
    check_state_collision, generate_tree, safe_progress, solve, AccController64, ControlInput64,
    ControllerConfig64, Obstacle64, Point64, VehicleParams64, VehicleState64, VelocityLimits,
    VelocityProblem64, VelocityWeights64,
};
use acc_oracle::geometry::{dense_collision, ellipse_level};
use acc_oracle::qp::{objective, solve_oracle_with, OracleSettings};

fn straight_problem(v_curr: f64, v_des: f64, s_safe: f64) -> VelocityProblem64 {
    VelocityProblem64 {
        v_curr,
        a_curr: 0.0,
        v_des,
        s_safe,
        kappa_crit: vec![0.0; 40],
        steps: 40,
        sample_time: 0.05,
        weights: VelocityWeights64::default(),
        limits: VelocityLimits::from(&VehicleParams64::passenger_car()),
        v_cap: 20.0,
    }
}

fn settings() -> OracleSettings {
    OracleSettings {
        tolerance: 1e-9,
        ..OracleSettings::default()
    }
}

fn assert_matches_oracle(p: &VelocityProblem64) -> (acc_core::VelocitySolution64, acc_oracle::qp::OracleSolution) {
    let sol = solve(p).unwrap();
    let oracle = solve_oracle_with(p, &settings());
    let f = objective(p, &sol.j);
    let rel = (f - oracle.objective).abs() / oracle.objective.abs().max(1e-9);
    assert!(rel < 1e-4, "objective {f} vs oracle {} (rel {rel:.2e})", oracle.objective);
    assert!((sol.v[1] - oracle.v[1]).abs() < 1e-3, "v1 {} vs {}", sol.v[1], oracle.v[1]);
    (sol, oracle)
}

#[test]
fn open_road_profile_matches_oracle() {
    let p = straight_problem(5.0, 5.0, 100.0);
    let (sol, oracle) = assert_matches_oracle(&p);
    assert!((sol.v[1] - 5.0).abs() < 0.1);
    assert!(sol.v[40].abs() < 1e-3 && oracle.v[40].abs() < 1e-3);
}

#[test]
fn short_progress_profile_matches_oracle() {
    let p = straight_problem(5.0, 5.0, 2.0);
    let (sol, _) = assert_matches_oracle(&p);
    assert!(sol.v[1] < 5.0);
    let slack = sol.slack_progress.iter().cloned().fold(0.0, f64::max);
    assert!(sol.s[40] <= 2.0 + slack + 1e-9);
}

#[test]
fn controller_open_road_and_wall_against_oracle() {
    let params = VehicleParams64::passenger_car();
    let cfg = ControllerConfig64::default();
    let a_semi = params.collision_ellipse().a;
    let z = VehicleState64::new(0.0, 0.0, 0.0, 0.0, 5.0);

    let far = Obstacle64::rectangle(25.0, 0.0, 2.0, 2.0).unwrap();
    let mut ctl = AccController64::new(params, cfg.clone(), VelocityWeights64::default()).unwrap();
    let out = ctl.compute_command(&z, 0.0, 5.0, std::slice::from_ref(&far));
    // Stopping from 5 m/s along the a_stop profile needs 5.125 m.
    let need = 5.0 * cfg.horizon / 2.0 + 5.0 * cfg.sample_time / 2.0;
    assert!(out.s_safe >= need - 1e-9, "s_safe {} need {need}", out.s_safe);
    assert!((out.v_cmd - 5.0).abs() <= 0.1 && !out.override_active);

    let wall = Obstacle64::rectangle(7.0, 0.0, 2.0, 20.0).unwrap();
    let mut ctl = AccController64::new(params, cfg.clone(), VelocityWeights64::default()).unwrap();
    let out = ctl.compute_command(&z, 0.0, 5.0, std::slice::from_ref(&wall));
    assert!(out.v_cmd < 5.0);
    assert!((out.s_safe - (6.0 - a_semi)).abs() <= 5.0 * cfg.sample_time + 1e-9);
    let mut p = straight_problem(5.0, 5.0, out.s_safe);
    p.kappa_crit = out.tree.as_ref().unwrap().kappa_crit.clone();
    let oracle = solve_oracle_with(&p, &settings());
    assert!((out.v_cmd - oracle.v[1].min(5.0)).abs() < 1e-3, "{} vs {}", out.v_cmd, oracle.v[1]);
}

#[test]
fn unit_square_ahead_agrees_with_dense_sampling() {
    let params = VehicleParams64 {
        body_length: 2.05 * std::f64::consts::SQRT_2,
        body_width: 1.03 * std::f64::consts::SQRT_2,
        ..VehicleParams64::passenger_car()
    };
    let cfg = ControllerConfig64::default();
    let z = VehicleState64::new(0.0, 0.0, 0.0, 0.0, 0.0);
    let sq = Obstacle64::rectangle(1.0, 0.0, 1.0, 1.0).unwrap();
    let dense = dense_collision(&z, sq.vertices(), &params);
    assert!(dense.collides);
    assert_eq!(check_state_collision(&z, std::slice::from_ref(&sq), &params, &cfg), dense.collides);
}

/// Rolls the straight braking trajectory out at `t_s / 20` and returns the
/// arc length at the first pose whose ellipse reaches the obstacle.
fn fine_first_contact(z0: VehicleState64, obstacle: &Obstacle64, params: &VehicleParams64, cfg: &ControllerConfig64) -> Option<f64> {
    let e = params.collision_ellipse();
    let samples = acc_oracle::geometry::dense_samples(obstacle.vertices(), 0.01);
    let dt = cfg.sample_time / 20.0;
    let a_stop = -z0.v / cfg.horizon;
    let mut z = z0;
    let mut s = 0.0;
    for _ in 0..(20 * cfg.steps) {
        let next = acc_core::euler_step(&z, &ControlInput64::new(0.0, a_stop), dt, params).unwrap();
        s += z.v * dt;
        z = next;
        if samples.iter().any(|&p| ellipse_level(&z, e.a, e.b, p) <= 1.0) {
            return Some(s);
        }
    }
    None
}

#[test]
fn safe_progress_against_fine_rollout() {
    let params = VehicleParams64::passenger_car();
    let cfg = ControllerConfig64::default();
    let z = VehicleState64::new(0.0, 0.0, 0.0, 0.0, 5.0);
    let a_semi = params.collision_ellipse().a;
    // Near face 4 m ahead of the reference point.
    let obstacle = Obstacle64::rectangle(4.5, 0.0, 1.0, 1.0).unwrap();
    let trees = generate_tree(&z, &params, &cfg).unwrap();
    let straight = &trees[cfg.trajectories / 2];
    assert_eq!(straight.input.delta_rate, 0.0);
    let coarse = safe_progress(straight, std::slice::from_ref(&obstacle), &params, &cfg);
    let contact = fine_first_contact(z, &obstacle, &params, &cfg).expect("contact");
    let step = z.v * cfg.sample_time;
    assert!((contact - (4.0 - a_semi)).abs() < 0.02, "fine contact at {contact}");
    assert!(coarse <= contact + 1e-9 && contact - coarse <= step + 1e-9, "coarse {coarse}, fine {contact}");
}

#[test]
fn unrelated_points_do_not_collide() {
    let params = VehicleParams64::passenger_car();
    let z = VehicleState64::new(0.0, 0.0, 0.0, 0.0, 0.0);
    let behind = [
        Point64::new(-51.0, -1.0),
        Point64::new(-49.0, -1.0),
        Point64::new(-49.0, 1.0),
        Point64::new(-51.0, 1.0),
    ];
    assert!(!dense_collision(&z, &behind, &params).collides);
}
