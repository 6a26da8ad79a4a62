//! Per-tick orchestration: tree -> safe progress and critical curvature ->
//! velocity optimization -> command, with a braking fallback when a stage fails.

use std::time::{Duration, Instant};

use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::geometry::Obstacle;
use crate::scalar::{clamp, Scalar};
use crate::tree::{plan_tree, ControllerConfig, TreeResult};
use crate::vehicle::{VehicleParams, VehicleState};
use crate::velocity::{
    build_problem, extract_command, solve, SolveStatus, VelocitySolution, VelocityWeights,
};

/// What the operator asks for: steering is always executed, velocity may be overridden.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OperatorCommand<T> {
    pub delta_des: T,
    pub v_des: T,
    /// Monotonic receipt time.
    pub timestamp: Duration,
}

impl<T: Scalar> OperatorCommand<T> {
    /// Command with steering and speed clamped into the accepted ranges.
    /// Non-finite values map to zero.
    pub fn clamped(
        delta_des: T,
        v_des: T,
        timestamp: Duration,
        params: &VehicleParams<T>,
        cfg: &ControllerConfig<T>,
    ) -> Self {
        let finite_or_zero = |x: T| if x.is_finite() { x } else { T::zero() };
        Self {
            delta_des: clamp(finite_or_zero(delta_des), -params.delta_max, params.delta_max),
            v_des: clamp(finite_or_zero(v_des), T::zero(), cfg.v_des_max),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccOutput<T> {
    pub v_cmd: T,
    /// Desired speed after clamping, the reference for `override_active`.
    pub v_des: T,
    pub s_safe: T,
    pub override_active: bool,
    pub compute_time: Duration,
    pub tree: Option<TreeResult<T>>,
    pub solution: Option<VelocitySolution<T>>,
    /// Per-tick speed decrement while the braking fallback is engaged.
    pub fallback_step: Option<T>,
}

impl<T: Scalar> AccOutput<T> {
    pub fn used_fallback(&self) -> bool {
        self.fallback_step.is_some()
    }

    pub fn status(&self) -> SolveStatus {
        self.solution
            .as_ref()
            .map_or(SolveStatus::Failed, |s| s.status)
    }
}

/// Conservative braking command used when planning fails: ramps from the
/// previous command toward zero by `max(|a_min| t_s, v_onset / N)` per tick, so
/// repeated failures reach standstill within the horizon.
pub fn fallback_command<T: Scalar>(
    v_curr: T,
    prev: Option<&AccOutput<T>>,
    params: &VehicleParams<T>,
    cfg: &ControllerConfig<T>,
) -> (T, T) {
    let v_curr = v_curr.max(T::zero());
    let base = prev.map_or(v_curr, |p| p.v_cmd.min(v_curr));
    let per_tick = -params.a_min * cfg.sample_time;
    let step = match prev.and_then(|p| p.fallback_step) {
        Some(step) => step,
        None => per_tick.max(base / T::from_usize(cfg.steps).unwrap()),
    };
    let next = base - step;
    // Absorb rounding so a ramp of `v_onset / N` lands on zero after N ticks.
    let next = if next <= step * T::lit(1e-6) { T::zero() } else { next };
    (next, step)
}

/// Stateful wrapper running one tick at a time. Holds only the previous output,
/// which the fallback ramp continues from.
#[derive(Debug, Clone)]
pub struct AccController<T> {
    params: VehicleParams<T>,
    cfg: ControllerConfig<T>,
    weights: VelocityWeights<T>,
    last: Option<AccOutput<T>>,
}

impl<T: Scalar> AccController<T> {
    pub fn new(
        params: VehicleParams<T>,
        cfg: ControllerConfig<T>,
        weights: VelocityWeights<T>,
    ) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        weights.validate()?;
        Ok(Self {
            params,
            cfg,
            weights,
            last: None,
        })
    }

    pub fn params(&self) -> &VehicleParams<T> {
        &self.params
    }

    pub fn config(&self) -> &ControllerConfig<T> {
        &self.cfg
    }

    pub fn weights(&self) -> &VelocityWeights<T> {
        &self.weights
    }

    pub fn last_output(&self) -> Option<&AccOutput<T>> {
        self.last.as_ref()
    }

    /// Runs one controller tick. Never fails: planning errors and solver failures
    /// produce the braking fallback command instead.
    pub fn compute_command(
        &mut self,
        z_curr: &VehicleState<T>,
        a_curr: T,
        v_des: T,
        obstacles: &[Obstacle<T>],
    ) -> AccOutput<T> {
        let start = Instant::now();
        let v_des = if v_des.is_finite() {
            clamp(v_des, T::zero(), self.cfg.v_des_max)
        } else {
            T::zero()
        };
        let mut out = match self.plan(z_curr, a_curr, v_des, obstacles) {
            Ok((tree, solution)) => {
                let v_cmd = extract_command(&solution)
                    .expect("plan only returns usable solutions")
                    .min(v_des);
                AccOutput {
                    v_cmd,
                    v_des,
                    s_safe: tree.s_safe,
                    override_active: false,
                    compute_time: Duration::ZERO,
                    tree: Some(tree),
                    solution: Some(solution),
                    fallback_step: None,
                }
            }
            Err((err, tree, solution)) => {
                warn!(%err, "velocity planning failed, braking");
                let v_curr = if z_curr.v.is_finite() { z_curr.v } else { T::zero() };
                let (v_cmd, step) =
                    fallback_command(v_curr, self.last.as_ref(), &self.params, &self.cfg);
                AccOutput {
                    v_cmd: v_cmd.min(v_des),
                    v_des,
                    s_safe: tree.as_ref().map_or(T::zero(), |t| t.s_safe),
                    override_active: false,
                    compute_time: Duration::ZERO,
                    tree,
                    solution,
                    fallback_step: Some(step),
                }
            }
        };
        out.override_active = out.v_cmd < v_des - self.cfg.override_threshold;
        out.compute_time = start.elapsed();
        self.last = Some(out.clone());
        out
    }

    #[allow(clippy::type_complexity)]
    fn plan(
        &self,
        z_curr: &VehicleState<T>,
        a_curr: T,
        v_des: T,
        obstacles: &[Obstacle<T>],
    ) -> std::result::Result<
        (TreeResult<T>, VelocitySolution<T>),
        (Error, Option<TreeResult<T>>, Option<VelocitySolution<T>>),
    > {
        if !z_curr.is_finite() {
            return Err((Error::NonFinite("vehicle state"), None, None));
        }
        let z = z_curr.saturated(&self.params);
        if z != *z_curr {
            warn!("vehicle state outside actuator range, clamped");
        }
        let a_curr = if a_curr.is_finite() { a_curr } else { T::zero() };
        let mut tree_start = z;
        tree_start.v = z.v.max(self.cfg.min_tree_speed);
        let tree = plan_tree(&tree_start, obstacles, &self.params, &self.cfg)
            .map_err(|e| (e, None, None))?;
        let problem = match build_problem(
            z.v,
            a_curr,
            v_des,
            &tree,
            &self.cfg,
            &self.weights,
            &self.params,
        ) {
            Ok(p) => p,
            Err(e) => return Err((e, Some(tree), None)),
        };
        let solution = match solve(&problem) {
            Ok(s) => s,
            Err(e) => return Err((e, Some(tree), None)),
        };
        match solution.status {
            SolveStatus::Failed => Err((Error::SolverFailed, Some(tree), Some(solution))),
            SolveStatus::SolvedWithSlack => {
                if solution.slack_progress.iter().any(|&s| s > T::lit(1e-3)) {
                    debug!(
                        s_safe = %tree.s_safe,
                        "progress constraint relaxed, safety margin reduced"
                    );
                }
                Ok((tree, solution))
            }
            SolveStatus::Solved => Ok((tree, solution)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn controller() -> AccController<f64> {
        AccController::new(
            VehicleParams::passenger_car(),
            ControllerConfig::default(),
            VelocityWeights::default(),
        )
        .unwrap()
    }

    #[test]
    fn fallback_examples() {
        let p = VehicleParams::<f64> {
            a_min: -3.0,
            ..VehicleParams::passenger_car()
        };
        let c = ControllerConfig::default();
        assert_eq!(fallback_command(0.0, None, &p, &c).0, 0.0);
        let (first, step) = fallback_command(5.0, None, &p, &c);
        assert!(first < 5.0);
        assert!((step - 0.15).abs() < 1e-12);

        // Repeated failures reach zero within the horizon.
        let mut prev: Option<AccOutput<f64>> = None;
        let mut v = 9.0;
        let mut ticks = 0;
        while v > 0.0 {
            let (cmd, step) = fallback_command(9.0, prev.as_ref(), &p, &c);
            v = cmd;
            prev = Some(AccOutput {
                v_cmd: cmd,
                v_des: 9.0,
                s_safe: 0.0,
                override_active: true,
                compute_time: Duration::ZERO,
                tree: None,
                solution: None,
                fallback_step: Some(step),
            });
            ticks += 1;
        }
        assert!(ticks <= c.steps, "{ticks} ticks");
    }

    #[test]
    fn failure_engages_fallback() {
        let mut acc = controller();
        let z = VehicleState::new(0.0, 0.0, 0.0, 0.0, f64::NAN);
        let out = acc.compute_command(&z, 0.0, 5.0, &[]);
        assert!(out.used_fallback());
        assert_eq!(out.v_cmd, 0.0);
        assert!(out.override_active);
    }

    #[test]
    fn open_road_tracks_operator() {
        let mut acc = controller();
        let z = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);
        let far = Obstacle::rectangle(40.0, 0.0, 2.0, 2.0).unwrap();
        let out = acc.compute_command(&z, 0.0, 5.0, &[far]);
        assert!((out.v_cmd - 5.0).abs() <= 0.1, "{}", out.v_cmd);
        assert!(!out.override_active);
        assert!(out.s_safe >= 5.0);
    }

    #[test]
    fn blocked_at_standstill_stays_stopped() {
        let mut acc = controller();
        let z = VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0);
        // Face 0.05 m past the front bumper, well inside the ellipse.
        let wall = Obstacle::rectangle(3.35, 0.0, 2.0, 4.0).unwrap();
        for v_des in [0.5, 5.0, 10.0] {
            let out = acc.compute_command(&z, 0.0, v_des, &[wall.clone()]);
            assert_eq!(out.s_safe, 0.0);
            assert!(out.v_cmd < 1e-6);
            assert!(out.override_active);
        }
    }

    #[test]
    fn wall_ahead_slows_down() {
        let mut acc = controller();
        let z = VehicleState::new(0.0, 0.0, 0.0, 0.0, 5.0);
        let wall = Obstacle::rectangle(7.0, 0.0, 2.0, 6.0).unwrap();
        let out = acc.compute_command(&z, 0.0, 5.0, &[wall]);
        assert!(out.v_cmd < 5.0);
        let a = VehicleParams::<f64>::passenger_car().collision_ellipse().a;
        assert!((out.s_safe - (6.0 - a)).abs() <= 0.25 + 1e-9);
    }

    #[test]
    fn never_exceeds_desired_speed() {
        let mut acc = controller();
        let z = VehicleState::new(0.0, 0.0, 0.0, 0.0, 6.0);
        let out = acc.compute_command(&z, 1.0, 2.0, &[]);
        assert!(out.v_cmd <= 2.0);
    }

    #[test]
    fn tick_is_deterministic() {
        let z = VehicleState::new(1.0, 0.5, 0.1, 0.05, 4.0);
        let obstacles = [
            Obstacle::rectangle(9.0, 2.0, 2.0, 2.0).unwrap(),
            Obstacle::rectangle(12.0, -2.5, 2.0, 2.0).unwrap(),
        ];
        let mut first = controller().compute_command(&z, -0.5, 5.0, &obstacles);
        let mut second = controller().compute_command(&z, -0.5, 5.0, &obstacles);
        first.compute_time = Duration::ZERO;
        second.compute_time = Duration::ZERO;
        assert_eq!(first, second);
    }

    #[test]
    fn command_clamping() {
        let p = VehicleParams::passenger_car();
        let c = ControllerConfig::default();
        let cmd = OperatorCommand::clamped(9.9, -1.0, Duration::ZERO, &p, &c);
        assert_eq!(cmd.delta_des, p.delta_max);
        assert_eq!(cmd.v_des, 0.0);
        let cmd = OperatorCommand::clamped(0.2, 3.0, Duration::ZERO, &p, &c);
        assert_eq!((cmd.delta_des, cmd.v_des), (0.2, 3.0));
    }
}
