//! Scripted operator: a path tracker that feedback-linearizes the lateral
//! error dynamics against a polyline reference, with curvature feedforward
//! over a speed-dependent lookahead window.

use std::time::Duration;

use acc_core::{ControllerConfig64, OperatorCommand64, Point64, VehicleParams64, VehicleState64};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Speed used by the tracking law below this, so the curvature demand stays finite.
const MIN_TRACKING_SPEED: f64 = 1.0;

fn wrap(angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let a = (angle + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if a <= -std::f64::consts::PI {
        a + two_pi
    } else {
        a
    }
}

/// Polyline reference with cumulative arc length. Beyond both ends the first
/// and last segments extend as straight lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    points: Vec<Point64>,
    arc: Vec<f64>,
    headings: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the closest point (negative or past the end on the extensions).
    pub s: f64,
    /// Signed lateral offset, positive to the left of the path direction.
    pub lateral: f64,
    pub heading: f64,
}

impl ReferencePath {
    pub fn new(points: Vec<Point64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(SimError::invalid("path.points", "at least two points required"));
        }
        let mut arc = vec![0.0];
        let mut headings = Vec::with_capacity(points.len() - 1);
        for (i, w) in points.windows(2).enumerate() {
            let d = w[1] - w[0];
            let len = d.norm();
            if !len.is_finite() || len <= 0.0 {
                return Err(SimError::invalid(
                    format!("path.points[{}]", i + 1),
                    "arc length must increase strictly",
                ));
            }
            arc.push(arc[i] + len);
            headings.push(d.y.atan2(d.x));
        }
        Ok(Self { points, arc, headings })
    }

    pub fn points(&self) -> &[Point64] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    fn segment_at(&self, s: f64) -> usize {
        let last = self.headings.len() - 1;
        match self.arc.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) | Err(i) => i.saturating_sub(1).min(last),
        }
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.headings[self.segment_at(s)]
    }

    pub fn point_at(&self, s: f64) -> Point64 {
        let i = self.segment_at(s);
        let (sin, cos) = self.headings[i].sin_cos();
        self.points[i] + Point64::new(cos, sin) * (s - self.arc[i])
    }

    /// Closest point over all segments; the end segments are treated as rays.
    pub fn project(&self, p: Point64) -> Projection {
        let last = self.headings.len() - 1;
        let mut best: Option<(f64, Projection)> = None;
        for i in 0..=last {
            let a = self.points[i];
            let len = self.arc[i + 1] - self.arc[i];
            let (sin, cos) = self.headings[i].sin_cos();
            let dir = Point64::new(cos, sin);
            let mut t = (p - a).dot(dir);
            if i > 0 {
                t = t.max(0.0);
            }
            if i < last {
                t = t.min(len);
            }
            let foot = a + dir * t;
            let dist = (p - foot).norm();
            if best.as_ref().map_or(true, |(d, _)| dist < *d) {
                best = Some((
                    dist,
                    Projection {
                        s: self.arc[i] + t,
                        lateral: dir.cross(p - a),
                        heading: self.headings[i],
                    },
                ));
            }
        }
        best.unwrap().1
    }

    /// Mean curvature over `[s0, s1]`: the heading change divided by the length.
    pub fn mean_curvature(&self, s0: f64, s1: f64) -> f64 {
        if s1 <= s0 {
            return 0.0;
        }
        let (i0, i1) = (self.segment_at(s0), self.segment_at(s1));
        let turn: f64 = (i0..i1)
            .map(|i| wrap(self.headings[i + 1] - self.headings[i]))
            .sum();
        turn / (s1 - s0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorGains {
    pub k_lat: f64,
    pub k_head: f64,
    pub lookahead_min: f64,
    pub lookahead_gain: f64,
}

impl Default for OperatorGains {
    fn default() -> Self {
        Self {
            k_lat: 0.6,
            k_head: 1.2,
            lookahead_min: 2.0,
            lookahead_gain: 0.5,
        }
    }
}

impl OperatorGains {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.k_lat, self.k_head, self.lookahead_min, self.lookahead_gain]
            .iter()
            .all(|g| g.is_finite() && *g >= 0.0);
        if !ok || self.lookahead_min <= 0.0 {
            return Err(SimError::invalid(
                "operator",
                "gains must be finite and non-negative with lookahead_min > 0",
            ));
        }
        Ok(())
    }

    pub fn lookahead(&self, v: f64) -> f64 {
        self.lookahead_min.max(self.lookahead_gain * v)
    }
}

/// Steering angle the tracker asks for, before range clamping.
///
/// The lateral error is driven by `e'' = -k_lat e - k_head e'` with
/// `e' = v sin(e_theta)`; the path curvature averaged over the lookahead
/// window is fed forward.
pub fn tracking_steer(
    z: &VehicleState64,
    path: &ReferencePath,
    gains: &OperatorGains,
    params: &VehicleParams64,
) -> f64 {
    let proj = path.project(Point64::new(z.x, z.y));
    let ell = gains.lookahead(z.v);
    let kappa_ref = path.mean_curvature(proj.s, proj.s + ell);
    let e_theta = wrap(z.theta - proj.heading);
    let v = z.v.max(MIN_TRACKING_SPEED);
    let lateral_accel = -gains.k_lat * proj.lateral - gains.k_head * v * e_theta.sin();
    let kappa = kappa_ref + lateral_accel / (v * v * e_theta.cos().max(0.2));
    (params.wheelbase * kappa).atan()
}

/// One scripted command: `v_des = v_ref`, steering from [`tracking_steer`],
/// limited to what the steering actuator can reach within one controller step.
pub fn scripted_operator(
    z: &VehicleState64,
    path: &ReferencePath,
    v_ref: f64,
    gains: &OperatorGains,
    params: &VehicleParams64,
    cfg: &ControllerConfig64,
    timestamp: Duration,
) -> OperatorCommand64 {
    let reach = params.ddelta_max * cfg.sample_time;
    let delta = tracking_steer(z, path, gains, params).clamp(z.delta - reach, z.delta + reach);
    OperatorCommand64::clamped(delta, v_ref, timestamp, params, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn straight() -> ReferencePath {
        ReferencePath::new(vec![Point64::new(0.0, 0.0), Point64::new(100.0, 0.0)]).unwrap()
    }

    #[test]
    fn rejects_degenerate_paths() {
        assert!(ReferencePath::new(vec![Point64::new(0.0, 0.0)]).is_err());
        let dup = vec![Point64::new(0.0, 0.0), Point64::new(0.0, 0.0)];
        assert!(ReferencePath::new(dup).is_err());
    }

    #[test]
    fn projection_signs_and_extensions() {
        let p = straight();
        let pr = p.project(Point64::new(10.0, 1.5));
        assert_relative_eq!(pr.s, 10.0);
        assert_relative_eq!(pr.lateral, 1.5);
        let behind = p.project(Point64::new(-3.0, -1.0));
        assert_relative_eq!(behind.s, -3.0);
        assert_relative_eq!(behind.lateral, -1.0);
        assert_relative_eq!(p.project(Point64::new(120.0, 0.0)).s, 120.0);
    }

    #[test]
    fn corner_curvature_is_turn_over_window() {
        let p = ReferencePath::new(vec![
            Point64::new(0.0, 0.0),
            Point64::new(10.0, 0.0),
            Point64::new(10.0, 10.0),
        ])
        .unwrap();
        let k = p.mean_curvature(8.0, 12.0);
        assert_relative_eq!(k, std::f64::consts::FRAC_PI_2 / 4.0, epsilon = 1e-12);
        assert_eq!(p.mean_curvature(0.0, 5.0), 0.0);
    }

    #[test]
    fn on_path_commands_zero_steer() {
        let params = VehicleParams64::passenger_car();
        let cfg = ControllerConfig64::default();
        let z = VehicleState64::new(5.0, 0.0, 0.0, 0.0, 5.0);
        let cmd = scripted_operator(&z, &straight(), 5.0, &OperatorGains::default(), &params, &cfg, Duration::ZERO);
        assert_eq!(cmd.delta_des, 0.0);
        assert_eq!(cmd.v_des, 5.0);
    }

    #[test]
    fn left_offset_steers_right() {
        let params = VehicleParams64::passenger_car();
        let z = VehicleState64::new(5.0, 1.0, 0.0, 0.0, 5.0);
        assert!(tracking_steer(&z, &straight(), &OperatorGains::default(), &params) < 0.0);
        let z = VehicleState64::new(5.0, -1.0, 0.0, 0.0, 5.0);
        assert!(tracking_steer(&z, &straight(), &OperatorGains::default(), &params) > 0.0);
    }

    #[test]
    fn steering_limited_to_one_step_of_slew() {
        let params = VehicleParams64::passenger_car();
        let cfg = ControllerConfig64::default();
        let z = VehicleState64::new(5.0, 3.0, 0.0, 0.0, 5.0);
        let cmd = scripted_operator(&z, &straight(), 5.0, &OperatorGains::default(), &params, &cfg, Duration::ZERO);
        assert_relative_eq!(cmd.delta_des, -params.ddelta_max * cfg.sample_time);
    }
}
