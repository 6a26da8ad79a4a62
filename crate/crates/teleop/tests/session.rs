use acc_sim::Scenario;
use acc_teleop::protocol::{OUTLINE_POINTS, OUTLINE_TRAJECTORIES};
use acc_teleop::{ServerMessage, Session};

fn corridor(extra: &str) -> Scenario {
    let text = format!(
        r#"
schema_version = 1
name = "corridor"
duration = 10.0

[operator]
v_ref = 5.0

[path]
points = [[-10.0, 0.0], [200.0, 0.0]]

[start]
v = 5.0

{extra}
"#
    );
    Scenario::from_toml(&text, "corridor.toml", &[]).unwrap()
}

fn command(steering: f64, velocity: f64) -> String {
    format!(r#"{{"type":"command","version":1,"steering":{steering},"velocity":{velocity}}}"#)
}

#[test]
fn in_range_command_is_accepted_unchanged() {
    let mut s = Session::new(1, corridor("")).unwrap();
    s.mailbox().ingest(&command(0.2, 3.0)).unwrap();
    let msg = s.tick();
    assert_eq!((msg.delta_des, msg.v_des), (0.2, 3.0));
    assert!(!msg.failsafe);
}

#[test]
fn out_of_range_command_is_clamped() {
    let scn = corridor("");
    let delta_max = scn.params.delta_max;
    let mut s = Session::new(1, scn).unwrap();
    s.mailbox().ingest(&command(9.9, -1.0)).unwrap();
    let msg = s.tick();
    assert_eq!((msg.delta_des, msg.v_des), (delta_max, 0.0));
}

#[test]
fn malformed_messages_are_counted_and_the_session_continues() {
    let mut s = Session::new(1, corridor("")).unwrap();
    let mb = s.mailbox();
    assert!(mb.ingest("{").is_err());
    assert!(mb.ingest(r#"{"type":"command","version":1,"steering":0.1}"#).is_err());
    mb.ingest(&command(0.0, 4.0)).unwrap();
    let msg = s.tick();
    assert_eq!(msg.dropped_messages, 2);
    assert_eq!(msg.v_des, 4.0);
    assert!(!msg.degraded);
}

#[test]
fn newest_command_wins() {
    let mut s = Session::new(1, corridor("")).unwrap();
    let mb = s.mailbox();
    mb.ingest(&command(0.1, 1.0)).unwrap();
    mb.ingest(&command(-0.1, 2.0)).unwrap();
    let msg = s.tick();
    assert_eq!((msg.delta_des, msg.v_des), (-0.1, 2.0));
}

#[test]
fn sequence_numbers_count_ticks() {
    let mut s = Session::new(1, corridor("")).unwrap();
    for k in 0..20 {
        let msg = s.tick();
        assert_eq!(msg.seq, k);
        assert!((msg.t - k as f64 * 0.05).abs() < 1e-12);
    }
    assert_eq!(s.log().rows.len(), 20);
}

#[test]
fn blocked_corridor_overrides_the_operator() {
    let mut s = Session::new(1, corridor("[[obstacles]]\ncenter = [8.0, 0.0]\nsize = [2.0, 8.0]\n")).unwrap();
    let mut first_override = None;
    for k in 0..80 {
        s.mailbox().ingest(&command(0.0, 5.0)).unwrap();
        let msg = s.tick();
        assert!(msg.v_cmd < msg.v_des, "tick {k}: v_cmd {} v_des {}", msg.v_cmd, msg.v_des);
        assert!(msg.tree.iter().any(|t| t.collides));
        assert!(msg.clearance.unwrap() > 0.0);
        if msg.override_active && first_override.is_none() {
            first_override = Some(k);
        }
        if first_override.is_some() && msg.v > 0.5 {
            assert!(msg.override_active, "tick {k}");
        }
    }
    // The jerk limit lets the command fall by at most a few 0.1 m/s per tick.
    assert!(first_override.expect("no override") <= 3);
    assert!(s.simulation().state().v < 1e-3);
}

#[test]
fn tree_outline_is_decimated() {
    let mut s = Session::new(1, corridor("")).unwrap();
    let msg = s.tick();
    assert_eq!(msg.tree.len(), OUTLINE_TRAJECTORIES);
    for t in &msg.tree {
        assert_eq!(t.points.len(), OUTLINE_POINTS);
    }
    // Extreme steering rates bracket the straight one.
    let last_y: Vec<f64> = msg.tree.iter().map(|t| t.points.last().unwrap()[1]).collect();
    assert!(last_y[0] < last_y[2] && last_y[2] < last_y[4]);
    assert!(last_y[2].abs() < 1e-12);
}

#[test]
fn state_message_round_trips_exactly() {
    let mut s = Session::new(1, corridor("[[obstacles]]\ncenter = [9.0, 2.5]\nsize = [1.0, 1.0]\n")).unwrap();
    s.mailbox().ingest(&command(0.137, 4.2)).unwrap();
    for _ in 0..15 {
        let msg = ServerMessage::State(s.tick());
        let back = ServerMessage::decode(&msg.encode()).unwrap();
        assert_eq!(back, msg);
    }
    let info = ServerMessage::SessionInfo(s.info());
    assert_eq!(ServerMessage::decode(&info.encode()).unwrap(), info);
}

#[test]
fn silent_operator_engages_the_failsafe_and_stops() {
    let scn = corridor("");
    let timeout_ticks = (scn.command_timeout / scn.cfg.sample_time).round() as u64;
    let mut s = Session::new(1, scn.clone()).unwrap();
    s.mailbox().ingest(&command(0.0, 5.0)).unwrap();
    let mut stopped_at = None;
    for k in 0..200u64 {
        let msg = s.tick();
        if k > timeout_ticks + 1 {
            assert!(msg.failsafe && msg.v_des == 0.0);
            assert!(s.failsafe_engaged());
        }
        if stopped_at.is_none() && msg.v <= acc_sim::sim::STANDSTILL_SPEED {
            stopped_at = Some(msg.t);
        }
        if stopped_at.is_some() {
            assert!(msg.v <= acc_sim::sim::STANDSTILL_SPEED);
        }
    }
    let bound = scn.command_timeout + scn.cfg.horizon + 5.0 / scn.params.a_min.abs();
    assert!(stopped_at.expect("never stopped") <= bound);

    // A fresh command releases it.
    s.mailbox().ingest(&command(0.0, 2.0)).unwrap();
    let msg = s.tick();
    assert!(!msg.failsafe && msg.v_des == 2.0);
}
