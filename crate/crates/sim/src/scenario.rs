//! Scenario documents (TOML): schema, `--set` overrides, validation and the
//! bundled scenarios.

use std::path::Path;

use acc_core::{
    ControllerConfig64, Obstacle64, Point64, VehicleParams64, VehicleState64, VelocityWeights64,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::operator::{OperatorGains, ReferencePath};

pub const SCHEMA_VERSION: u32 = 1;

const BUNDLED: &[(&str, &str)] = &[
    ("paper-fig4", include_str!("../scenarios/paper-fig4.toml")),
    ("empty-road", include_str!("../scenarios/empty-road.toml")),
];

/// Names of the scenarios compiled into the binary.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub vehicle: VehicleDoc,
    #[serde(default)]
    pub controller: ControllerDoc,
    #[serde(default)]
    pub weights: WeightsDoc,
    #[serde(default)]
    pub operator: OperatorDoc,
    pub path: PathDoc,
    #[serde(default)]
    pub start: StartDoc,
    #[serde(default)]
    pub obstacles: Vec<ObstacleDoc>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleDoc {
    pub wheelbase: Option<f64>,
    pub body_length: Option<f64>,
    pub body_width: Option<f64>,
    pub delta_max: Option<f64>,
    pub ddelta_max: Option<f64>,
    pub a_min: Option<f64>,
    pub a_max: Option<f64>,
    pub a_lat_max: Option<f64>,
    pub j_max: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerDoc {
    #[serde(rename = "T_H")]
    pub horizon: Option<f64>,
    #[serde(rename = "N")]
    pub steps: Option<usize>,
    pub t_s: Option<f64>,
    #[serde(rename = "M")]
    pub trajectories: Option<usize>,
    pub edge_sample_spacing: Option<f64>,
    pub min_tree_speed: Option<f64>,
    pub v_des_max: Option<f64>,
    pub override_threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsDoc {
    pub w_v_des: Option<f64>,
    pub w_v_term: Option<f64>,
    pub w_slack_acc: Option<f64>,
    pub w_slack_jerk: Option<f64>,
    pub w_slack_progress: Option<f64>,
    pub w_jerk: Option<f64>,
    pub slack_linear_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorDoc {
    #[serde(default = "default_v_ref")]
    pub v_ref: f64,
    #[serde(default = "default_timeout")]
    pub command_timeout: f64,
    pub k_lat: Option<f64>,
    pub k_head: Option<f64>,
    pub lookahead_min: Option<f64>,
    pub lookahead_gain: Option<f64>,
}

fn default_v_ref() -> f64 {
    5.0
}

fn default_timeout() -> f64 {
    0.5
}

impl Default for OperatorDoc {
    fn default() -> Self {
        Self {
            v_ref: default_v_ref(),
            command_timeout: default_timeout(),
            k_lat: None,
            k_head: None,
            lookahead_min: None,
            lookahead_gain: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathDoc {
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartDoc {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub v: f64,
}

/// Either an explicit convex polygon or a rectangle given by center and size.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleDoc {
    pub vertices: Option<Vec<[f64; 2]>>,
    pub center: Option<[f64; 2]>,
    /// `[length, width]` along and across `heading`.
    pub size: Option<[f64; 2]>,
    pub heading: Option<f64>,
}

/// A validated scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: Option<String>,
    pub obstacles: Vec<Obstacle64>,
    pub path: ReferencePath,
    pub v_ref: f64,
    pub gains: OperatorGains,
    pub start: VehicleState64,
    pub params: VehicleParams64,
    pub cfg: ControllerConfig64,
    pub weights: VelocityWeights64,
    pub duration: f64,
    pub seed: u64,
    /// Operator commands older than this engage the failsafe (s).
    pub command_timeout: f64,
    /// `--set` overrides as given, for provenance.
    pub overrides: Vec<String>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn parse_error(origin: &str, text: Option<&str>, err: toml::de::Error) -> SimError {
    let location = match (text, err.span()) {
        (Some(text), Some(span)) => {
            let (l, c) = line_col(text, span.start);
            format!("{origin}:{l}:{c}")
        }
        _ => origin.to_string(),
    };
    SimError::Parse {
        location,
        message: err.message().trim().to_string(),
    }
}

/// Applies one `a.b.c=value` override to a document table. The value is read
/// as a TOML value and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| SimError::BadOverride(format!("{spec}: expected KEY=VALUE")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(SimError::BadOverride(format!("{spec}: empty key segment")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = parts.split_last().unwrap();
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| SimError::BadOverride(format!("{spec}: {p} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn points(raw: &[[f64; 2]]) -> Vec<Point64> {
    raw.iter().map(|p| Point64::new(p[0], p[1])).collect()
}

fn obstacle(doc: &ObstacleDoc, index: usize) -> Result<Obstacle64> {
    let loc = format!("obstacles[{index}]");
    let poly = match (&doc.vertices, doc.center, doc.size, doc.heading) {
        (Some(v), None, None, None) => Obstacle64::new(points(v)),
        (None, Some(c), Some(s), heading) => Obstacle64::rectangle(0.0, 0.0, s[0], s[1])
            .map(|r| r.transformed(heading.unwrap_or(0.0), c[0], c[1])),
        _ => {
            return Err(SimError::invalid(
                loc,
                "give either `vertices` or `center` and `size` (optional `heading`)",
            ))
        }
    };
    poly.map_err(|e| SimError::invalid(loc, e.to_string()))
}

impl ScenarioDoc {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_error(origin, Some(text), e))
    }

    /// Parses with overrides applied to the raw table before deserialization.
    pub fn parse_with_overrides(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Self::parse(text, origin);
        }
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| parse_error(origin, Some(text), e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::deserialize(toml::Value::Table(table))
            .map_err(|e| parse_error(&format!("{origin} (after --set)"), None, e))
    }

    pub fn into_scenario(self, overrides: Vec<String>) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SimError::invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(SimError::invalid("duration", "must be finite and > 0"));
        }

        let base = VehicleParams64::passenger_car();
        let v = &self.vehicle;
        let params = VehicleParams64 {
            wheelbase: v.wheelbase.unwrap_or(base.wheelbase),
            body_length: v.body_length.unwrap_or(base.body_length),
            body_width: v.body_width.unwrap_or(base.body_width),
            delta_max: v.delta_max.unwrap_or(base.delta_max),
            ddelta_max: v.ddelta_max.unwrap_or(base.ddelta_max),
            a_min: v.a_min.unwrap_or(base.a_min),
            a_max: v.a_max.unwrap_or(base.a_max),
            a_lat_max: v.a_lat_max.unwrap_or(base.a_lat_max),
            j_max: v.j_max.unwrap_or(base.j_max),
        };
        params
            .validate()
            .map_err(|e| SimError::invalid("vehicle", e.to_string()))?;

        let base = ControllerConfig64::default();
        let c = &self.controller;
        let cfg = ControllerConfig64 {
            horizon: c.horizon.unwrap_or(base.horizon),
            steps: c.steps.unwrap_or(base.steps),
            sample_time: c.t_s.unwrap_or(base.sample_time),
            trajectories: c.trajectories.unwrap_or(base.trajectories),
            edge_sample_spacing: c.edge_sample_spacing.or(base.edge_sample_spacing),
            min_tree_speed: c.min_tree_speed.unwrap_or(base.min_tree_speed),
            v_des_max: c.v_des_max.unwrap_or(base.v_des_max),
            override_threshold: c.override_threshold.unwrap_or(base.override_threshold),
        };
        cfg.validate()
            .map_err(|e| SimError::invalid("controller", e.to_string()))?;

        let base = VelocityWeights64::default();
        let w = &self.weights;
        let weights = VelocityWeights64 {
            w_v_des: w.w_v_des.unwrap_or(base.w_v_des),
            w_v_term: w.w_v_term.unwrap_or(base.w_v_term),
            w_slack_acc: w.w_slack_acc.unwrap_or(base.w_slack_acc),
            w_slack_jerk: w.w_slack_jerk.unwrap_or(base.w_slack_jerk),
            w_slack_progress: w.w_slack_progress.unwrap_or(base.w_slack_progress),
            w_jerk: w.w_jerk.unwrap_or(base.w_jerk),
            slack_linear_ratio: w.slack_linear_ratio.unwrap_or(base.slack_linear_ratio),
        };
        weights
            .validate()
            .map_err(|e| SimError::invalid("weights", e.to_string()))?;

        let g = &self.operator;
        let dg = OperatorGains::default();
        let gains = OperatorGains {
            k_lat: g.k_lat.unwrap_or(dg.k_lat),
            k_head: g.k_head.unwrap_or(dg.k_head),
            lookahead_min: g.lookahead_min.unwrap_or(dg.lookahead_min),
            lookahead_gain: g.lookahead_gain.unwrap_or(dg.lookahead_gain),
        };
        gains.validate()?;
        let v_ref = self.operator.v_ref;
        if !(v_ref.is_finite() && v_ref >= 0.0) {
            return Err(SimError::invalid("operator.v_ref", "must be finite and >= 0"));
        }
        let timeout = self.operator.command_timeout;
        if !(timeout.is_finite() && timeout > 0.0) {
            return Err(SimError::invalid("operator.command_timeout", "must be finite and > 0"));
        }

        let path = ReferencePath::new(points(&self.path.points))?;

        let s = &self.start;
        let start = VehicleState64::new(s.x, s.y, s.theta, s.delta, s.v);
        if !start.is_finite() || start.v < 0.0 || start.delta.abs() > params.delta_max {
            return Err(SimError::invalid(
                "start",
                "state must be finite with v >= 0 and |delta| <= delta_max",
            ));
        }

        let obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| obstacle(o, i))
            .collect::<Result<Vec<_>>>()?;

        Ok(Scenario {
            name: self.name,
            description: self.description,
            obstacles,
            path,
            v_ref,
            gains,
            start,
            params,
            cfg,
            weights,
            duration: self.duration,
            seed: self.seed,
            command_timeout: timeout,
            overrides,
        })
    }
}

impl Scenario {
    /// Parses and validates a scenario document. `origin` names the source in errors.
    pub fn from_toml(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        ScenarioDoc::parse_with_overrides(text, origin, overrides)?
            .into_scenario(overrides.to_vec())
    }

    pub fn bundled(name: &str) -> Result<Self> {
        Self::load(name, &[])
    }

    /// Loads a bundled scenario by name, or else a document from the filesystem.
    pub fn load(name_or_path: &str, overrides: &[String]) -> Result<Self> {
        if let Some(text) = bundled_source(name_or_path) {
            return Self::from_toml(text, name_or_path, overrides);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(SimError::UnknownScenario(name_or_path.to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, &path.display().to_string(), overrides)
    }

    /// Number of controller ticks in `duration`.
    pub fn ticks(&self) -> u64 {
        (self.duration / self.cfg.sample_time).round() as u64
    }
}
