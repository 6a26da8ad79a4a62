//! Velocity optimization over a jerk-driven point mass `[s, v, a]`.
//!
//! Cost: `w_v_des (v_1 - v_des)^2 + w_v_term v_N^2 + w_jerk sum j_n^2 + J_s` subject to the initial
//! state, the point-mass dynamics, `s_n <= s_safe`, the lateral acceleration limit
//! along the critical curvature profile, and soft acceleration and jerk limits.
//!
//! Dynamics, for `n = 0..N-1`:
//!
//! ```text
//!     a_{n+1} = a_n + t_s j_n
//!     v_{n+1} = v_n + t_s a_{n+1}
//!     s_{n+1} = s_n + t_s v_n
//! ```
//!
//! `a_n` is the acceleration applied over the interval ending at step `n`, so
//! `a_0` is the measured current acceleration and `v_1` reacts to the first jerk.
//! Positions integrate explicitly, exactly like the vehicle model rollout.
//!
//! The states are eliminated (condensed) so the QP runs over the `N` jerks only;
//! slack variables are handled natively by the soft-constraint QP solver.

use crate::error::{Error, Result};
use crate::qp::{solve_qp, Bound, DenseQp, LinearConstraint, QpSettings, QpStatus, SoftPenalty};
use crate::scalar::Scalar;
use crate::tree::{ControllerConfig, TreeResult};
use crate::vehicle::VehicleParams;

/// Curvatures smaller than this impose no lateral speed limit.
pub const CURVATURE_EPSILON: f64 = 1e-6;
/// Slacks at or above this magnitude count as active.
pub const SLACK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityWeights<T> {
    pub w_v_des: T,
    pub w_v_term: T,
    pub w_slack_acc: T,
    pub w_slack_jerk: T,
    pub w_slack_progress: T,
    /// Small jerk penalty. Without it the intermediate speeds are free and the
    /// optimum is not unique; zero disables it.
    pub w_jerk: T,
    /// Each slack `s` costs `w (s^2 + slack_linear_ratio * s)`.
    pub slack_linear_ratio: T,
}

impl<T: Scalar> Default for VelocityWeights<T> {
    fn default() -> Self {
        Self {
            w_v_des: T::one(),
            w_v_term: T::lit(100.0),
            w_slack_acc: T::lit(1e4),
            w_slack_jerk: T::lit(1e4),
            w_slack_progress: T::lit(1e5),
            w_jerk: T::lit(1e-6),
            slack_linear_ratio: T::lit(0.1),
        }
    }
}

impl<T: Scalar> VelocityWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w_v_des,
            self.w_v_term,
            self.w_slack_acc,
            self.w_slack_jerk,
            self.w_slack_progress,
            self.slack_linear_ratio,
        ];
        if all.iter().any(|w| !w.is_finite() || *w <= T::zero()) {
            return Err(Error::InvalidProblem("weights must be finite and > 0".into()));
        }
        if !self.w_jerk.is_finite() || self.w_jerk < T::zero() {
            return Err(Error::InvalidProblem("w_jerk must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn penalty(&self, w: T) -> SoftPenalty<T> {
        SoftPenalty {
            quadratic: T::two() * w,
            linear: self.slack_linear_ratio * w,
        }
    }

    fn slack_cost(&self, w: T, s: T) -> T {
        w * (s * s + self.slack_linear_ratio * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityLimits<T> {
    pub a_min: T,
    pub a_max: T,
    pub a_lat_max: T,
    pub j_max: T,
}

impl<T: Scalar> From<&VehicleParams<T>> for VelocityLimits<T> {
    fn from(p: &VehicleParams<T>) -> Self {
        Self {
            a_min: p.a_min,
            a_max: p.a_max,
            a_lat_max: p.a_lat_max,
            j_max: p.j_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProblem<T> {
    pub v_curr: T,
    pub a_curr: T,
    pub v_des: T,
    pub s_safe: T,
    /// Curvature for steps `1..=N`.
    pub kappa_crit: Vec<T>,
    pub steps: usize,
    pub sample_time: T,
    pub weights: VelocityWeights<T>,
    pub limits: VelocityLimits<T>,
    pub v_cap: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Solved,
    SolvedWithSlack,
    Failed,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Solved => "solved",
            SolveStatus::SolvedWithSlack => "solved-with-slack",
            SolveStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySolution<T> {
    /// `N + 1` values each.
    pub s: Vec<T>,
    pub v: Vec<T>,
    pub a: Vec<T>,
    /// `N` jerks.
    pub j: Vec<T>,
    /// Slack of `a_{n+1} >= a_min`, per step.
    pub slack_acc_lower: Vec<T>,
    pub slack_acc_upper: Vec<T>,
    /// Slack of `j_n >= -j_max`, per step.
    pub slack_jerk_lower: Vec<T>,
    pub slack_jerk_upper: Vec<T>,
    /// Slack of `s_{n+1} <= s_safe`, per step.
    pub slack_progress: Vec<T>,
    pub objective: T,
    pub kkt_residual: T,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl<T: Scalar> VelocitySolution<T> {
    pub fn max_slack(&self) -> T {
        [
            &self.slack_acc_lower,
            &self.slack_acc_upper,
            &self.slack_jerk_lower,
            &self.slack_jerk_upper,
            &self.slack_progress,
        ]
        .iter()
        .flat_map(|v| v.iter())
        .fold(T::zero(), |m, &s| m.max(s))
    }
}

/// Linear speed bound equivalent to `|kappa| v^2 <= a_lat_max` for `v >= 0`.
pub fn lateral_velocity_bound<T: Scalar>(kappa: T, a_lat_max: T, v_cap: T) -> T {
    let k = kappa.abs();
    if k < T::lit(CURVATURE_EPSILON) {
        return v_cap;
    }
    v_cap.min((a_lat_max / k).sqrt())
}

/// Forward-simulates the point-mass dynamics for a jerk sequence.
pub fn propagate<T: Scalar>(v0: T, a0: T, jerks: &[T], t_s: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = jerks.len();
    let mut s = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    let mut a = Vec::with_capacity(n + 1);
    s.push(T::zero());
    v.push(v0);
    a.push(a0);
    for (k, &j) in jerks.iter().enumerate() {
        let a_next = a[k] + t_s * j;
        a.push(a_next);
        v.push(v[k] + t_s * a_next);
        s.push(s[k] + t_s * v[k]);
    }
    (s, v, a)
}

pub fn build_problem<T: Scalar>(
    v_curr: T,
    a_curr: T,
    v_des: T,
    tree: &TreeResult<T>,
    cfg: &ControllerConfig<T>,
    weights: &VelocityWeights<T>,
    params: &VehicleParams<T>,
) -> Result<VelocityProblem<T>> {
    if tree.kappa_crit.len() != cfg.steps {
        return Err(Error::DimensionMismatch {
            expected: cfg.steps,
            found: tree.kappa_crit.len(),
        });
    }
    let problem = VelocityProblem {
        v_curr,
        a_curr,
        v_des,
        s_safe: tree.s_safe,
        kappa_crit: tree.kappa_crit.clone(),
        steps: cfg.steps,
        sample_time: cfg.sample_time,
        weights: *weights,
        limits: params.into(),
        v_cap: T::two() * cfg.v_des_max,
    };
    problem.validate()?;
    Ok(problem)
}

/// Affine function `constant + coeffs . j[..coeffs.len()]` of the jerks.
#[derive(Clone)]
struct Affine<T> {
    constant: T,
    coeffs: Vec<T>,
}

impl<T: Scalar> Affine<T> {
    fn constant(c: T) -> Self {
        Self {
            constant: c,
            coeffs: Vec::new(),
        }
    }

    /// `self + scale * other`, widened to `len` coefficients.
    fn plus_scaled(&self, scale: T, other: &Self, len: usize) -> Self {
        let mut coeffs = vec![T::zero(); len];
        for (c, &x) in coeffs.iter_mut().zip(&self.coeffs) {
            *c += x;
        }
        for (c, &x) in coeffs.iter_mut().zip(&other.coeffs) {
            *c += scale * x;
        }
        Self {
            constant: self.constant + scale * other.constant,
            coeffs,
        }
    }
}

/// Row indices of each constraint family inside the condensed QP.
struct RowMap {
    progress: Vec<usize>,
    accel: Vec<usize>,
    jerk: Vec<usize>,
}

impl<T: Scalar> VelocityProblem<T> {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.v_curr,
            self.a_curr,
            self.v_des,
            self.s_safe,
            self.sample_time,
            self.v_cap,
        ];
        if finite.iter().any(|x| !x.is_finite()) || self.kappa_crit.iter().any(|k| !k.is_finite()) {
            return Err(Error::NonFinite("velocity problem"));
        }
        if self.steps == 0 || self.sample_time <= T::zero() {
            return Err(Error::InvalidProblem("needs N > 0 and t_s > 0".into()));
        }
        if self.kappa_crit.len() != self.steps {
            return Err(Error::DimensionMismatch {
                expected: self.steps,
                found: self.kappa_crit.len(),
            });
        }
        if self.s_safe < T::zero() || self.v_des < T::zero() || self.v_curr < T::zero() {
            return Err(Error::InvalidProblem(
                "s_safe, v_des and v_curr must be >= 0".into(),
            ));
        }
        if self.v_cap <= T::zero() {
            return Err(Error::InvalidProblem("v_cap must be > 0".into()));
        }
        let l = &self.limits;
        if !(l.a_min < T::zero() && l.a_max > T::zero() && l.a_lat_max > T::zero() && l.j_max > T::zero()) {
            return Err(Error::InvalidProblem("inconsistent limits".into()));
        }
        self.weights.validate()
    }

    /// Upper speed bound for steps `1..=N`.
    pub fn velocity_bounds(&self) -> Vec<T> {
        self.kappa_crit
            .iter()
            .map(|&k| lateral_velocity_bound(k, self.limits.a_lat_max, self.v_cap))
            .collect()
    }

    /// Cost of a given profile, including slack penalties.
    pub fn objective_of(&self, v: &[T], j: &[T], slacks: &SlackSet<'_, T>) -> T {
        let w = &self.weights;
        let n = self.steps;
        let dv = v[1] - self.v_des;
        let mut f = w.w_v_des * dv * dv + w.w_v_term * v[n] * v[n];
        for k in 0..n {
            f += w.w_jerk * j[k] * j[k]
                + w.slack_cost(w.w_slack_acc, slacks.acc_lower[k])
                + w.slack_cost(w.w_slack_acc, slacks.acc_upper[k])
                + w.slack_cost(w.w_slack_jerk, slacks.jerk_lower[k])
                + w.slack_cost(w.w_slack_jerk, slacks.jerk_upper[k])
                + w.slack_cost(w.w_slack_progress, slacks.progress[k]);
        }
        f
    }

    fn condense(&self) -> (DenseQp<T>, RowMap) {
        let n = self.steps;
        let ts = self.sample_time;
        let w = &self.weights;
        let l = &self.limits;
        let bounds = self.velocity_bounds();

        let mut qp = DenseQp::new(n);
        let mut map = RowMap {
            progress: Vec::with_capacity(n),
            accel: Vec::with_capacity(n),
            jerk: Vec::with_capacity(n),
        };
        let mut a = Affine::constant(self.a_curr);
        let mut v = Affine::constant(self.v_curr);
        let mut s = Affine::constant(T::zero());
        let mut v1 = None;
        for k in 0..n {
            let mut jerk = Affine::constant(T::zero());
            jerk.coeffs = vec![T::zero(); k + 1];
            jerk.coeffs[k] = T::one();
            let a_next = a.plus_scaled(ts, &jerk, k + 1);
            let v_next = v.plus_scaled(ts, &a_next, k + 1);
            let s_next = s.plus_scaled(ts, &v, k);

            map.progress.push(qp.constraints.len());
            qp.push(LinearConstraint {
                offset: 0,
                coeffs: s_next.coeffs.clone(),
                lower: None,
                upper: Some(Bound::soft(
                    self.s_safe - s_next.constant,
                    w.penalty(w.w_slack_progress),
                )),
            });
            qp.push(LinearConstraint {
                offset: 0,
                coeffs: v_next.coeffs.clone(),
                lower: Some(Bound::hard(-v_next.constant)),
                upper: Some(Bound::hard(bounds[k] - v_next.constant)),
            });
            map.accel.push(qp.constraints.len());
            qp.push(LinearConstraint {
                offset: 0,
                coeffs: a_next.coeffs.clone(),
                lower: Some(Bound::soft(l.a_min - a_next.constant, w.penalty(w.w_slack_acc))),
                upper: Some(Bound::soft(l.a_max - a_next.constant, w.penalty(w.w_slack_acc))),
            });
            map.jerk.push(qp.constraints.len());
            qp.push(LinearConstraint {
                offset: k,
                coeffs: vec![T::one()],
                lower: Some(Bound::soft(-l.j_max, w.penalty(w.w_slack_jerk))),
                upper: Some(Bound::soft(l.j_max, w.penalty(w.w_slack_jerk))),
            });

            if k == 0 {
                v1 = Some(v_next.clone());
            }
            a = a_next;
            v = v_next;
            s = s_next;
        }
        let v1 = v1.expect("at least one step");
        qp.add_squared_term(w.w_v_des, 0, &v1.coeffs, v1.constant - self.v_des);
        qp.add_squared_term(w.w_v_term, 0, &v.coeffs, v.constant);
        if w.w_jerk > T::zero() {
            for k in 0..n {
                qp.add_squared_term(w.w_jerk, k, &[T::one()], T::zero());
            }
        }
        (qp, map)
    }

    /// The condensed QP over the jerk sequence.
    pub fn condensed_qp(&self) -> DenseQp<T> {
        self.condense().0
    }
}

/// Borrowed view of per-step slack values.
pub struct SlackSet<'a, T> {
    pub acc_lower: &'a [T],
    pub acc_upper: &'a [T],
    pub jerk_lower: &'a [T],
    pub jerk_upper: &'a [T],
    pub progress: &'a [T],
}

pub fn solve<T: Scalar>(problem: &VelocityProblem<T>) -> Result<VelocitySolution<T>> {
    solve_with(problem, &QpSettings::default())
}

pub fn solve_with<T: Scalar>(
    problem: &VelocityProblem<T>,
    settings: &QpSettings<T>,
) -> Result<VelocitySolution<T>> {
    problem.validate()?;
    let (qp, map) = problem.condense();
    let sol = solve_qp(&qp, settings);
    let (s, v, a) = propagate(problem.v_curr, problem.a_curr, &sol.x, problem.sample_time);
    let pick = |rows: &[usize], from: &[T]| -> Vec<T> {
        rows.iter().map(|&r| from[r].max(T::zero())).collect()
    };
    let slack_acc_lower = pick(&map.accel, &sol.lower_slack);
    let slack_acc_upper = pick(&map.accel, &sol.upper_slack);
    let slack_jerk_lower = pick(&map.jerk, &sol.lower_slack);
    let slack_jerk_upper = pick(&map.jerk, &sol.upper_slack);
    let slack_progress = pick(&map.progress, &sol.upper_slack);
    let objective = problem.objective_of(
        &v,
        &sol.x,
        &SlackSet {
            acc_lower: &slack_acc_lower,
            acc_upper: &slack_acc_upper,
            jerk_lower: &slack_jerk_lower,
            jerk_upper: &slack_jerk_upper,
            progress: &slack_progress,
        },
    );
    let mut out = VelocitySolution {
        s,
        v,
        a,
        j: sol.x,
        slack_acc_lower,
        slack_acc_upper,
        slack_jerk_lower,
        slack_jerk_upper,
        slack_progress,
        objective,
        kkt_residual: sol.residual,
        iterations: sol.iterations,
        status: SolveStatus::Failed,
    };
    if sol.status == QpStatus::Converged {
        out.status = if out.max_slack() < T::lit(SLACK_TOLERANCE) {
            SolveStatus::Solved
        } else {
            SolveStatus::SolvedWithSlack
        };
    }
    Ok(out)
}

/// The velocity command: the optimized speed at step 1, floored at zero.
pub fn extract_command<T: Scalar>(sol: &VelocitySolution<T>) -> Result<T> {
    if sol.status == SolveStatus::Failed {
        return Err(Error::SolverFailed);
    }
    sol.v.get(1).map(|v| v.max(T::zero())).ok_or(Error::SolverFailed)
}
