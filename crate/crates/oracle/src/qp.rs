//! Reference solver for the velocity QP.
//!
//! Works on the jerk sequence alone. Every state the cost or constraints touch
//! is an affine function of the jerks, obtained by simulating the point-mass
//! recurrence on unit impulses. Soft constraints enter through the proximal map
//! of their exact penalty; the problem is then solved by ADMM with per-row
//! step sizes that adapt to the residual balance.

use acc_core::VelocityProblem64;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub jerks: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub objective: f64,
    /// Largest violation of a hard speed bound.
    pub hard_violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
struct Penalty {
    quad: f64,
    lin: f64,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: DVector<f64>,
    constant: f64,
    lo: f64,
    hi: f64,
    /// `None` for a hard row.
    penalty: Option<Penalty>,
}

impl Row {
    /// Penalized cost of the row taking value `r`; infinite outside a hard box.
    fn cost(&self, r: f64) -> f64 {
        let over = (r - self.hi).max(0.0);
        let under = (self.lo - r).max(0.0);
        match self.penalty {
            Some(p) => p.quad * (over * over + under * under) + p.lin * (over + under),
            None if over > 0.0 || under > 0.0 => f64::INFINITY,
            None => 0.0,
        }
    }

    /// `argmin_r cost(r) + rho/2 (r - y)^2`.
    fn prox(&self, y: f64, rho: f64) -> f64 {
        match self.penalty {
            None => y.clamp(self.lo, self.hi),
            Some(p) => {
                if y > self.hi {
                    self.hi + ((rho * (y - self.hi) - p.lin) / (2.0 * p.quad + rho)).max(0.0)
                } else if y < self.lo {
                    self.lo - ((rho * (self.lo - y) - p.lin) / (2.0 * p.quad + rho)).max(0.0)
                } else {
                    y
                }
            }
        }
    }
}

/// `(s, v, a)` for a jerk sequence under `a+ = a + t j, v+ = v + t a+, s+ = s + t v`.
pub fn rollout(problem: &VelocityProblem64, jerks: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = problem.sample_time;
    let (mut s, mut v, mut a) = (vec![0.0], vec![problem.v_curr], vec![problem.a_curr]);
    for (n, &j) in jerks.iter().enumerate() {
        a.push(a[n] + t * j);
        v.push(v[n] + t * a[n + 1]);
        s.push(s[n] + t * v[n]);
    }
    (s, v, a)
}

fn speed_bound(problem: &VelocityProblem64, kappa: f64) -> f64 {
    if kappa.abs() < 1e-6 {
        problem.v_cap
    } else {
        problem.v_cap.min((problem.limits.a_lat_max / kappa.abs()).sqrt())
    }
}

/// Objective of a jerk sequence, with each soft violation charged at its
/// optimal slack value. Hard speed violations are not charged here.
pub fn objective(problem: &VelocityProblem64, jerks: &[f64]) -> f64 {
    let (s, v, a) = rollout(problem, jerks);
    let w = &problem.weights;
    let l = &problem.limits;
    let n = problem.steps;
    let pen = |weight: f64, excess: f64| {
        let e = excess.max(0.0);
        weight * (e * e + w.slack_linear_ratio * e)
    };
    let mut f = w.w_v_des * (v[1] - problem.v_des).powi(2) + w.w_v_term * v[n].powi(2);
    for k in 0..n {
        f += w.w_jerk * jerks[k].powi(2)
            + pen(w.w_slack_progress, s[k + 1] - problem.s_safe)
            + pen(w.w_slack_acc, a[k + 1] - l.a_max)
            + pen(w.w_slack_acc, l.a_min - a[k + 1])
            + pen(w.w_slack_jerk, jerks[k] - l.j_max)
            + pen(w.w_slack_jerk, -l.j_max - jerks[k]);
    }
    f
}

/// Largest amount by which a profile leaves `0 <= v <= bound`.
pub fn hard_violation(problem: &VelocityProblem64, v: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, &kappa) in problem.kappa_crit.iter().enumerate() {
        let vk = v[k + 1];
        worst = worst.max(-vk).max(vk - speed_bound(problem, kappa));
    }
    worst
}

fn build_rows(problem: &VelocityProblem64) -> (Vec<Row>, DMatrix<f64>, DVector<f64>) {
    let n = problem.steps;
    let w = &problem.weights;
    let l = &problem.limits;
    let zero = vec![0.0; n];
    let (s0, v0, a0) = rollout(problem, &zero);
    let mut ds = DMatrix::zeros(n + 1, n);
    let mut dv = DMatrix::zeros(n + 1, n);
    let mut da = DMatrix::zeros(n + 1, n);
    for k in 0..n {
        let mut e = zero.clone();
        e[k] = 1.0;
        let (s, v, a) = rollout(problem, &e);
        for i in 0..=n {
            ds[(i, k)] = s[i] - s0[i];
            dv[(i, k)] = v[i] - v0[i];
            da[(i, k)] = a[i] - a0[i];
        }
    }
    let soft = |weight: f64| {
        Some(Penalty {
            quad: weight,
            lin: weight * w.slack_linear_ratio,
        })
    };
    let mut rows = Vec::with_capacity(4 * n);
    for k in 0..n {
        let i = k + 1;
        rows.push(Row {
            coeffs: ds.row(i).transpose(),
            constant: s0[i],
            lo: f64::NEG_INFINITY,
            hi: problem.s_safe,
            penalty: soft(w.w_slack_progress),
        });
        rows.push(Row {
            coeffs: dv.row(i).transpose(),
            constant: v0[i],
            lo: 0.0,
            hi: speed_bound(problem, problem.kappa_crit[k]),
            penalty: None,
        });
        rows.push(Row {
            coeffs: da.row(i).transpose(),
            constant: a0[i],
            lo: l.a_min,
            hi: l.a_max,
            penalty: soft(w.w_slack_acc),
        });
        let mut unit = DVector::zeros(n);
        unit[k] = 1.0;
        rows.push(Row {
            coeffs: unit,
            constant: 0.0,
            lo: -l.j_max,
            hi: l.j_max,
            penalty: soft(w.w_slack_jerk),
        });
    }

    // Quadratic part: f = x'Px/2 + q'x + const.
    let v1 = dv.row(1).transpose();
    let vn = dv.row(n).transpose();
    let mut p = DMatrix::identity(n, n) * (2.0 * w.w_jerk);
    p += &v1 * v1.transpose() * (2.0 * w.w_v_des);
    p += &vn * vn.transpose() * (2.0 * w.w_v_term);
    let q = &v1 * (2.0 * w.w_v_des * (v0[1] - problem.v_des)) + &vn * (2.0 * w.w_v_term * v0[n]);
    (rows, p, q)
}

/// Rows rescaled to unit coefficient norm; penalties rescaled to match.
fn normalize(rows: &mut [Row]) {
    for r in rows {
        let d = r.coeffs.norm();
        if d <= 0.0 {
            continue;
        }
        r.coeffs /= d;
        r.constant /= d;
        r.lo /= d;
        r.hi /= d;
        if let Some(p) = r.penalty.as_mut() {
            p.quad *= d * d;
            p.lin *= d;
        }
    }
}

pub struct OracleSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            max_iterations: 2_000_000,
            tolerance: 1e-11,
        }
    }
}

pub fn solve_oracle(problem: &VelocityProblem64) -> OracleSolution {
    solve_oracle_with(problem, &OracleSettings::default())
}

pub fn solve_oracle_with(problem: &VelocityProblem64, settings: &OracleSettings) -> OracleSolution {
    let n = problem.steps;
    let (mut rows, p, q) = build_rows(problem);
    normalize(&mut rows);
    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut c = DVector::zeros(m);
    for (i, r) in rows.iter().enumerate() {
        a.set_row(i, &r.coeffs.transpose());
        c[i] = r.constant;
    }
    let sigma = 1e-9;
    let mut rho = 1.0;
    let factor = |rho: f64| -> Cholesky<f64, Dyn> {
        let k = &p + DMatrix::identity(n, n) * sigma + a.transpose() * &a * rho;
        Cholesky::new(k).expect("ADMM system is positive definite")
    };
    let mut chol = factor(rho);

    let mut x = DVector::zeros(n);
    let mut z = &a * &x + &c;
    let mut u = DVector::zeros(m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        iterations += 1;
        let rhs = &x * sigma - &q + a.transpose() * ((&z - &c - &u) * rho);
        x = chol.solve(&rhs);
        let ax = &a * &x + &c;
        let z_prev = z.clone();
        for i in 0..m {
            z[i] = rows[i].prox(ax[i] + u[i], rho);
        }
        u += &ax - &z;

        if iterations % 25 == 0 {
            // Residuals normalized as in OSQP, so the balance is scale free.
            let y = &u * rho;
            let aty = a.transpose() * &y;
            let px = &p * &x;
            let primal = (&ax - &z).amax();
            let dual = (&px + &q + &aty).amax();
            let prim_scale = ax.amax().max(z.amax()).max(1e-12);
            let dual_scale = px.amax().max(aty.amax()).max(q.amax()).max(1e-12);
            let step = (a.transpose() * (&z - &z_prev) * rho).amax();
            if primal <= settings.tolerance * (1.0 + prim_scale)
                && dual <= settings.tolerance * (1.0 + dual_scale)
                && step <= settings.tolerance * (1.0 + dual_scale)
            {
                converged = true;
                break;
            }
            if iterations % 200 == 0 {
                let ratio = ((primal / prim_scale) / (dual / dual_scale).max(1e-300)).sqrt();
                if !(0.2..=5.0).contains(&ratio) {
                    let next = (rho * ratio).clamp(1e-8, 1e10);
                    u *= rho / next;
                    rho = next;
                    chol = factor(rho);
                }
            }
        }
    }

    let mut jerks: Vec<f64> = x.iter().copied().collect();
    if let Some(px) = polish(&rows, &p, &q, &z) {
        let candidate: Vec<f64> = px.iter().copied().collect();
        let (_, v, _) = rollout(problem, &candidate);
        if hard_violation(problem, &v) <= 1e-12 && objective(problem, &candidate) < objective(problem, &jerks) {
            jerks = candidate;
        }
    }
    let (s, v, acc) = rollout(problem, &jerks);
    OracleSolution {
        objective: objective(problem, &jerks),
        hard_violation: hard_violation(problem, &v),
        jerks,
        s,
        v,
        a: acc,
        iterations,
        converged,
    }
}

/// Reads each row's state off the ADMM split variable (the proximal maps put
/// it exactly on a bound when that bound binds), then solves the resulting
/// equality constrained quadratic through its full KKT system.
fn polish(rows: &[Row], p: &DMatrix<f64>, q: &DVector<f64>, z: &DVector<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    let mut h = p.clone();
    let mut g = q.clone();
    let mut eq: Vec<(usize, f64)> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let zi = z[i];
        let ai = &r.coeffs;
        if zi == r.hi || zi == r.lo {
            eq.push((i, zi - r.constant));
            continue;
        }
        let Some(pen) = r.penalty else { continue };
        if zi > r.hi {
            h += ai * ai.transpose() * (2.0 * pen.quad);
            g += ai * (2.0 * pen.quad * (r.constant - r.hi) + pen.lin);
        } else if zi < r.lo {
            h += ai * ai.transpose() * (2.0 * pen.quad);
            g += ai * (2.0 * pen.quad * (r.constant - r.lo) - pen.lin);
        }
    }
    let me = eq.len();
    let mut kkt = DMatrix::zeros(n + me, n + me);
    let mut rhs = DVector::zeros(n + me);
    kkt.view_mut((0, 0), (n, n)).copy_from(&h);
    for i in 0..n {
        rhs[i] = -g[i];
    }
    for (e, &(i, b)) in eq.iter().enumerate() {
        for j in 0..n {
            kkt[(n + e, j)] = rows[i].coeffs[j];
            kkt[(j, n + e)] = rows[i].coeffs[j];
        }
        rhs[n + e] = b;
    }
    let svd = kkt.svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-13;
    let sol = svd.solve(&rhs, cutoff).ok()?;
    let x = sol.rows(0, n).into_owned();
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Total penalized cost of the rows at `x`, used as a sanity check in tests.
#[allow(dead_code)]
fn row_cost(rows: &[Row], x: &DVector<f64>) -> f64 {
    rows.iter().map(|r| r.cost(r.coeffs.dot(x) + r.constant)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use acc_core::{VelocityLimits, VelocityWeights64};

    fn problem(v_curr: f64, v_des: f64, s_safe: f64, n: usize) -> VelocityProblem64 {
        VelocityProblem64 {
            v_curr,
            a_curr: 0.0,
            v_des,
            s_safe,
            kappa_crit: vec![0.0; n],
            steps: n,
            sample_time: 0.25,
            weights: VelocityWeights64::default(),
            limits: VelocityLimits {
                a_min: -4.0,
                a_max: 2.0,
                a_lat_max: 3.0,
                j_max: 10.0,
            },
            v_cap: 20.0,
        }
    }

    #[test]
    fn rest_is_optimal_at_rest() {
        let sol = solve_oracle(&problem(0.0, 0.0, 3.0, 6));
        assert!(sol.objective.abs() < 1e-9, "{}", sol.objective);
        assert!(sol.v.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn objective_matches_hand_rollout() {
        let p = problem(2.0, 3.0, 100.0, 2);
        // j = (4, -4): a = 0, 1, 0; v = 2, 2.25, 2.25; s = 0, 0.5, 1.0625
        let f = objective(&p, &[4.0, -4.0]);
        let expected = (2.25f64 - 3.0).powi(2) + 100.0 * 2.25f64.powi(2) + 1e-6 * 32.0;
        assert!((f - expected).abs() < 1e-12, "{f} vs {expected}");
    }

    #[test]
    fn prox_of_soft_upper_bound() {
        let row = Row {
            coeffs: DVector::from_element(1, 1.0),
            constant: 0.0,
            lo: f64::NEG_INFINITY,
            hi: 1.0,
            penalty: Some(Penalty { quad: 1.0, lin: 0.5 }),
        };
        // minimize (t^2 + 0.5 t) + (t - 2)^2 / 2 over t >= 0: 3t = 1.5
        assert!((row.prox(3.0, 1.0) - 1.5).abs() < 1e-15);
        assert_eq!(row.prox(0.5, 1.0), 0.5);
        assert_eq!(row.prox(1.2, 1.0), 1.0);
        assert_eq!(row_cost(&[row], &DVector::from_element(1, 2.0)), 1.5);
    }
}
