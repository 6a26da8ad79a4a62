//! JSON wire messages. All lengths in metres, angles in radians, speeds in
//! m/s, times in seconds. Field-by-field documentation lives in
//! `docs/protocol.md`.

use acc_core::{Point64, TreeResult};
use acc_sim::Scenario;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

/// Most trajectories in a state message's tree outline.
pub const OUTLINE_TRAJECTORIES: usize = 5;
/// Most points per outlined trajectory.
pub const OUTLINE_POINTS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(u32),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

/// The only inbound message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    pub version: u32,
    /// Desired steering angle (rad).
    pub steering: f64,
    /// Desired speed (m/s).
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command(CommandMessage),
}

/// Parses and validates one inbound text frame. Range clamping happens when
/// the command is applied; here only shape, version and finiteness are
/// checked.
pub fn parse_command(text: &str) -> Result<CommandMessage, ProtocolError> {
    let ClientMessage::Command(cmd) =
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if cmd.version != PROTOCOL_VERSION {
        return Err(ProtocolError::Version(cmd.version));
    }
    if !cmd.steering.is_finite() {
        return Err(ProtocolError::NonFinite("steering"));
    }
    if !cmd.velocity.is_finite() {
        return Err(ProtocolError::NonFinite("velocity"));
    }
    Ok(cmd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlineTrajectory {
    /// Decimated `[x, y]` states, first and last included.
    pub points: Vec<[f64; 2]>,
    pub safe_progress: f64,
    pub collides: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub version: u32,
    /// Increments by one per tick, starting at 0.
    pub seq: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub delta: f64,
    pub v: f64,
    pub a: f64,
    pub delta_des: f64,
    pub v_des: f64,
    pub v_cmd: f64,
    pub s_safe: f64,
    pub override_active: bool,
    pub failsafe: bool,
    /// Set when the tick failed and this repeats the last known state.
    pub degraded: bool,
    pub status: String,
    pub compute_ms: f64,
    /// Body-to-obstacle distance, `null` when the scenario has no obstacles.
    pub clearance: Option<f64>,
    pub skipped_ticks: u64,
    pub dropped_messages: u64,
    pub tree: Vec<OutlineTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleInfo {
    pub wheelbase: f64,
    pub body_length: f64,
    pub body_width: f64,
    pub ellipse_a: f64,
    pub ellipse_b: f64,
    pub delta_max: f64,
    pub ddelta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub version: u32,
    pub session_id: u64,
    pub scenario: String,
    pub tick_rate_hz: f64,
    pub sample_time: f64,
    pub horizon: f64,
    pub command_timeout: f64,
    pub v_ref: f64,
    pub vehicle: VehicleInfo,
    pub obstacles: Vec<Vec<[f64; 2]>>,
    pub path: Vec<[f64; 2]>,
}

impl SessionInfo {
    pub fn new(session_id: u64, scenario: &Scenario) -> Self {
        let p = &scenario.params;
        let e = p.collision_ellipse();
        let xy = |q: &Point64| [q.x, q.y];
        Self {
            version: PROTOCOL_VERSION,
            session_id,
            scenario: scenario.name.clone(),
            tick_rate_hz: 1.0 / scenario.cfg.sample_time,
            sample_time: scenario.cfg.sample_time,
            horizon: scenario.cfg.horizon,
            command_timeout: scenario.command_timeout,
            v_ref: scenario.v_ref,
            vehicle: VehicleInfo {
                wheelbase: p.wheelbase,
                body_length: p.body_length,
                body_width: p.body_width,
                ellipse_a: e.a,
                ellipse_b: e.b,
                delta_max: p.delta_max,
                ddelta_max: p.ddelta_max,
            },
            obstacles: scenario
                .obstacles
                .iter()
                .map(|o| o.vertices().iter().map(xy).collect())
                .collect(),
            path: scenario.path.points().iter().map(xy).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateMessage),
    SessionInfo(SessionInfo),
}

impl ServerMessage {
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn decode(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

/// `count` indices spread evenly over `0..len`, both ends included.
fn spread(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..count)
        .map(|k| ((k * (len - 1)) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// Down-samples a tree to at most [`OUTLINE_TRAJECTORIES`] trajectories of at
/// most [`OUTLINE_POINTS`] points. Both extreme steering rates are kept.
pub fn tree_outline(tree: &TreeResult<f64>) -> Vec<OutlineTrajectory> {
    spread(tree.trajectories.len(), OUTLINE_TRAJECTORIES)
        .into_iter()
        .map(|m| {
            let traj = &tree.trajectories[m];
            OutlineTrajectory {
                points: spread(traj.states.len(), OUTLINE_POINTS)
                    .into_iter()
                    .map(|n| [traj.states[n].x, traj.states[n].y])
                    .collect(),
                safe_progress: traj.safe_progress,
                collides: traj.first_collision_index.is_some(),
            }
        })
        .collect()
}
