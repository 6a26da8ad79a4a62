//! Trajectory tree: constant steering-rate braking fan, collision checking against
//! static convex obstacles, global safe progress, and the critical curvature profile.

use crate::error::{Error, Result};
use crate::geometry::{Ellipse, Obstacle, Point2};
use crate::scalar::{clamp, Scalar};
use crate::vehicle::{curvature_from_steering, euler_step, ControlInput, VehicleParams, VehicleState};

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig<T> {
    /// Prediction horizon T_H (s).
    pub horizon: T,
    /// Number of discretization steps N.
    pub steps: usize,
    /// Step length t_s (s); `steps * sample_time == horizon`.
    pub sample_time: T,
    /// Number of trajectories M in the tree (odd, >= 3).
    pub trajectories: usize,
    /// Spacing of sample points along obstacle edges (m). `None` picks
    /// `min(a, b) / 2` of the collision ellipse.
    pub edge_sample_spacing: Option<T>,
    /// Speed the tree is rolled out with when the vehicle is slower (m/s), so
    /// a stopped vehicle still sees the space directly ahead of it.
    pub min_tree_speed: T,
    /// Largest desired velocity accepted from the operator (m/s).
    pub v_des_max: T,
    /// `v_cmd < v_des - override_threshold` flags an active override (m/s).
    pub override_threshold: T,
}

impl<T: Scalar> Default for ControllerConfig<T> {
    fn default() -> Self {
        Self {
            horizon: T::lit(2.0),
            steps: 40,
            sample_time: T::lit(0.05),
            trajectories: 15,
            edge_sample_spacing: None,
            min_tree_speed: T::lit(1.0),
            v_des_max: T::lit(10.0),
            override_threshold: T::lit(0.2),
        }
    }
}

impl<T: Scalar> ControllerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("N must be positive".into()));
        }
        if !(self.sample_time > T::zero()) || !(self.horizon > T::zero()) {
            return Err(Error::InvalidConfig("T_H and t_s must be positive".into()));
        }
        let n = T::from_usize(self.steps).unwrap();
        if (n * self.sample_time - self.horizon).abs() > T::lit(1e-6) * self.horizon {
            return Err(Error::InvalidConfig(format!(
                "N * t_s = {} does not match T_H = {}",
                n * self.sample_time,
                self.horizon
            )));
        }
        if self.trajectories < 3 || self.trajectories % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "M must be odd and >= 3, got {}",
                self.trajectories
            )));
        }
        if let Some(spacing) = self.edge_sample_spacing {
            if !(spacing > T::zero()) {
                return Err(Error::InvalidConfig("edge_sample_spacing must be > 0".into()));
            }
        }
        if !(self.min_tree_speed >= T::zero()) {
            return Err(Error::InvalidConfig("min_tree_speed must be >= 0".into()));
        }
        if !(self.v_des_max > T::zero()) {
            return Err(Error::InvalidConfig("v_des_max must be > 0".into()));
        }
        if !(self.override_threshold >= T::zero()) {
            return Err(Error::InvalidConfig("override_threshold must be >= 0".into()));
        }
        Ok(())
    }

    pub fn edge_spacing(&self, params: &VehicleParams<T>) -> T {
        self.edge_sample_spacing.unwrap_or_else(|| {
            let e = params.collision_ellipse();
            e.a.min(e.b) * T::half()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// `N + 1` states, index 0 is the current state.
    pub states: Vec<VehicleState<T>>,
    pub input: ControlInput<T>,
    /// Cumulative arc length per state index, `progress[0] == 0`.
    pub progress: Vec<T>,
    pub safe_progress: T,
    pub first_collision_index: Option<usize>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn length(&self) -> T {
        *self.progress.last().expect("trajectory has states")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeResult<T> {
    /// Global safe progress (m).
    pub s_safe: T,
    /// Critical curvature for steps `1..=N`.
    pub kappa_crit: Vec<T>,
    pub trajectories: Vec<Trajectory<T>>,
}

/// `M` steering rates spread uniformly over `[-ddelta_max, ddelta_max]`.
pub fn steering_rates<T: Scalar>(count: usize, ddelta_max: T) -> Result<Vec<T>> {
    if count < 2 {
        return Err(Error::TooFewTrajectories { min: 2, got: count });
    }
    let denom = T::from_usize(count - 1).unwrap();
    let rate = |m: usize| -ddelta_max + T::two() * ddelta_max * T::from_usize(m).unwrap() / denom;
    // The upper half mirrors the lower half so the set is exactly symmetric.
    Ok((0..count)
        .map(|m| {
            if 2 * m + 1 == count {
                T::zero()
            } else if 2 * m < count {
                rate(m)
            } else {
                -rate(count - 1 - m)
            }
        })
        .collect())
}

/// Constant deceleration that brings `v_curr` to rest at the end of the horizon.
pub fn stop_deceleration<T: Scalar>(v_curr: T, horizon: T) -> T {
    if v_curr == T::zero() {
        return T::zero();
    }
    -v_curr / horizon
}

/// Rolls out one braking trajectory per steering rate from `z_curr`.
pub fn generate_tree<T: Scalar>(
    z_curr: &VehicleState<T>,
    params: &VehicleParams<T>,
    cfg: &ControllerConfig<T>,
) -> Result<Vec<Trajectory<T>>> {
    let a_stop = stop_deceleration(z_curr.v, cfg.horizon);
    steering_rates(cfg.trajectories, params.ddelta_max)?
        .into_iter()
        .map(|rate| {
            let input = ControlInput::new(rate, a_stop);
            let mut states = Vec::with_capacity(cfg.steps + 1);
            let mut progress = Vec::with_capacity(cfg.steps + 1);
            let mut z = *z_curr;
            let mut travelled = T::zero();
            states.push(z);
            progress.push(travelled);
            for _ in 0..cfg.steps {
                let next = euler_step(&z, &input, cfg.sample_time, params)?;
                travelled += (Point2::new(next.x, next.y) - Point2::new(z.x, z.y)).norm();
                states.push(next);
                progress.push(travelled);
                z = next;
            }
            Ok(Trajectory {
                states,
                input,
                safe_progress: travelled,
                progress,
                first_collision_index: None,
            })
        })
        .collect()
}

struct ObstacleSamples<T> {
    obstacle: Obstacle<T>,
    points: Vec<Point2<T>>,
    center: Point2<T>,
    radius: T,
}

/// Ellipse-versus-polygon collision test with per-obstacle samples precomputed.
pub struct CollisionChecker<T> {
    ellipse: Ellipse<T>,
    obstacles: Vec<ObstacleSamples<T>>,
}

impl<T: Scalar> CollisionChecker<T> {
    pub fn new(obstacles: &[Obstacle<T>], params: &VehicleParams<T>, cfg: &ControllerConfig<T>) -> Self {
        let spacing = cfg.edge_spacing(params);
        Self {
            ellipse: params.collision_ellipse(),
            obstacles: obstacles
                .iter()
                .map(|o| ObstacleSamples {
                    points: o.boundary_samples(spacing),
                    center: o.centroid(),
                    radius: o.bounding_radius(),
                    obstacle: o.clone(),
                })
                .collect(),
        }
    }

    pub fn ellipse(&self) -> Ellipse<T> {
        self.ellipse
    }

    /// True if any obstacle corner or edge sample lies inside the vehicle ellipse,
    /// or the vehicle center lies inside an obstacle.
    pub fn collides(&self, z: &VehicleState<T>) -> bool {
        let origin = Point2::new(z.x, z.y);
        let reach = self.ellipse.a.max(self.ellipse.b);
        self.obstacles.iter().any(|o| {
            if (o.center - origin).norm() > reach + o.radius {
                return false;
            }
            o.obstacle.contains(origin)
                || o
                    .points
                    .iter()
                    .any(|&p| self.ellipse.contains(p.to_local(origin, z.theta)))
        })
    }

    /// Arc length up to the last state before the first collision, and that
    /// collision's index. State 0 is the present pose and is not checked.
    pub fn safe_progress(&self, traj: &Trajectory<T>) -> (T, Option<usize>) {
        match (1..traj.states.len()).find(|&i| self.collides(&traj.states[i])) {
            Some(i) => (traj.progress[i - 1], Some(i)),
            None => (traj.length(), None),
        }
    }

    /// Fills in `safe_progress` and `first_collision_index` of every trajectory.
    pub fn assess(&self, trajectories: &mut [Trajectory<T>]) {
        for traj in trajectories {
            let (safe, hit) = self.safe_progress(traj);
            traj.safe_progress = safe;
            traj.first_collision_index = hit;
        }
    }
}

pub fn check_state_collision<T: Scalar>(
    z: &VehicleState<T>,
    obstacles: &[Obstacle<T>],
    params: &VehicleParams<T>,
    cfg: &ControllerConfig<T>,
) -> bool {
    CollisionChecker::new(obstacles, params, cfg).collides(z)
}

pub fn safe_progress<T: Scalar>(
    traj: &Trajectory<T>,
    obstacles: &[Obstacle<T>],
    params: &VehicleParams<T>,
    cfg: &ControllerConfig<T>,
) -> T {
    CollisionChecker::new(obstacles, params, cfg).safe_progress(traj).0
}

pub fn global_safe_progress<T: Scalar>(trajectories: &[Trajectory<T>]) -> Result<T> {
    trajectories
        .iter()
        .map(|t| t.safe_progress)
        .reduce(T::min)
        .ok_or(Error::EmptyTree)
}

/// Curvature of the steering profile that reaches full lock first, for steps `1..=N`.
pub fn critical_curvature_profile<T: Scalar>(
    delta_curr: T,
    params: &VehicleParams<T>,
    cfg: &ControllerConfig<T>,
) -> Result<Vec<T>> {
    let rate = if delta_curr < T::zero() {
        -params.ddelta_max
    } else {
        params.ddelta_max
    };
    (1..=cfg.steps)
        .map(|n| {
            let delta = clamp(
                delta_curr + T::from_usize(n).unwrap() * cfg.sample_time * rate,
                -params.delta_max,
                params.delta_max,
            );
            curvature_from_steering(delta, params.wheelbase)
        })
        .collect()
}

/// Generates, checks, and reduces the tree for one controller tick.
pub fn plan_tree<T: Scalar>(
    z_curr: &VehicleState<T>,
    obstacles: &[Obstacle<T>],
    params: &VehicleParams<T>,
    cfg: &ControllerConfig<T>,
) -> Result<TreeResult<T>> {
    let mut trajectories = generate_tree(z_curr, params, cfg)?;
    CollisionChecker::new(obstacles, params, cfg).assess(&mut trajectories);
    Ok(TreeResult {
        s_safe: global_safe_progress(&trajectories)?,
        kappa_crit: critical_curvature_profile(z_curr.delta, params, cfg)?,
        trajectories,
    })
}
