//! Dense convex QP solver with natively soft inequality constraints.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' H x + g' x + sum_i (1/2 Z_i s_i^2 + z_i s_i)
//!     subject to  l_r - s_lr <= c_r' x <= u_r + s_ur     for every row r
//!                 s >= 0
//! ```
//!
//! where each side of a row is either hard (no slack) or soft with its own penalty.
//! Rows store their coefficients over a contiguous span of `x`, which keeps the
//! normal-equation assembly cheap for the triangular structure of condensed MPC
//! problems. The method is a primal-dual interior point iteration with Mehrotra
//! predictor-corrector steps; slacks and their multipliers are eliminated per
//! constraint so each iteration factors a single `n x n` matrix.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftPenalty<T> {
    pub quadratic: T,
    pub linear: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound<T> {
    pub value: T,
    /// `None` makes the bound hard.
    pub penalty: Option<SoftPenalty<T>>,
}

impl<T: Scalar> Bound<T> {
    pub fn hard(value: T) -> Self {
        Self { value, penalty: None }
    }

    pub fn soft(value: T, penalty: SoftPenalty<T>) -> Self {
        Self {
            value,
            penalty: Some(penalty),
        }
    }
}

/// `lower <= coeffs . x[offset..offset + coeffs.len()] <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint<T> {
    pub offset: usize,
    pub coeffs: Vec<T>,
    pub lower: Option<Bound<T>>,
    pub upper: Option<Bound<T>>,
}

impl<T: Scalar> LinearConstraint<T> {
    pub fn eval(&self, x: &[T]) -> T {
        self.coeffs
            .iter()
            .zip(&x[self.offset..])
            .map(|(&c, &xi)| c * xi)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp<T> {
    pub n: usize,
    /// Row-major `n x n`, symmetric positive semidefinite.
    pub hessian: Vec<T>,
    pub gradient: Vec<T>,
    pub constraints: Vec<LinearConstraint<T>>,
}

impl<T: Scalar> DenseQp<T> {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            hessian: vec![T::zero(); n * n],
            gradient: vec![T::zero(); n],
            constraints: Vec::new(),
        }
    }

    /// Adds `weight * (c' x + d)^2` to the objective, where `c` lives at `offset`.
    /// Returns the constant `weight * d^2` that the QP itself does not carry.
    pub fn add_squared_term(&mut self, weight: T, offset: usize, coeffs: &[T], d: T) -> T {
        let two_w = T::two() * weight;
        for (i, &ci) in coeffs.iter().enumerate() {
            let row = (offset + i) * self.n;
            for (j, &cj) in coeffs.iter().enumerate() {
                self.hessian[row + offset + j] += two_w * ci * cj;
            }
            self.gradient[offset + i] += two_w * d * ci;
        }
        weight * d * d
    }

    pub fn push(&mut self, constraint: LinearConstraint<T>) {
        assert!(
            constraint.offset + constraint.coeffs.len() <= self.n,
            "constraint span exceeds variable count"
        );
        self.constraints.push(constraint);
    }

    pub fn quadratic_objective(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.n {
            let mut hx = T::zero();
            for j in 0..self.n {
                hx += self.hessian[i * self.n + j] * x[j];
            }
            acc += x[i] * (T::half() * hx + self.gradient[i]);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings<T> {
    pub tolerance: T,
    pub max_iterations: usize,
    pub regularization: T,
}

impl<T: Scalar> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            tolerance: T::default_tolerance(),
            max_iterations: 200,
            regularization: T::epsilon().sqrt() * T::lit(1e-2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T> {
    pub x: Vec<T>,
    /// Slack used by each row's lower side (zero for hard or absent sides).
    pub lower_slack: Vec<T>,
    pub upper_slack: Vec<T>,
    pub lower_dual: Vec<T>,
    pub upper_dual: Vec<T>,
    /// Full objective including the slack penalties.
    pub objective: T,
    /// Largest scaled KKT residual at termination.
    pub residual: T,
    pub iterations: usize,
    pub status: QpStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Work {
    Inactive,
    Active,
    Penalized,
}

struct Side<T> {
    row: usize,
    upper: bool,
    /// Sign applied to the row coefficients so every side reads `a' x <= beta + s`.
    sign: T,
    beta: T,
    penalty: Option<SoftPenalty<T>>,
}

#[derive(Clone)]
struct Iterate<T> {
    x: Vec<T>,
    t: Vec<T>,
    lam: Vec<T>,
    sig: Vec<T>,
    nu: Vec<T>,
}

impl<T: Scalar> Iterate<T> {
    fn is_finite(&self) -> bool {
        [&self.x, &self.t, &self.lam, &self.sig, &self.nu]
            .iter()
            .all(|v| v.iter().all(|e| e.is_finite()))
    }
}

struct Direction<T> {
    dx: Vec<T>,
    dt: Vec<T>,
    dlam: Vec<T>,
    dsig: Vec<T>,
    dnu: Vec<T>,
}

struct Residuals<T> {
    rx: Vec<T>,
    rt: Vec<T>,
    rs: Vec<T>,
    mu: T,
    scaled: T,
}

pub fn solve_qp<T: Scalar>(qp: &DenseQp<T>, settings: &QpSettings<T>) -> QpSolution<T> {
    Solver::new(qp, settings).run()
}

struct Solver<'a, T> {
    qp: &'a DenseQp<T>,
    settings: &'a QpSettings<T>,
    sides: Vec<Side<T>>,
    pairs: usize,
}

impl<'a, T: Scalar> Solver<'a, T> {
    fn new(qp: &'a DenseQp<T>, settings: &'a QpSettings<T>) -> Self {
        let mut sides = Vec::new();
        for (row, c) in qp.constraints.iter().enumerate() {
            if let Some(b) = c.lower {
                sides.push(Side {
                    row,
                    upper: false,
                    sign: -T::one(),
                    beta: -b.value,
                    penalty: b.penalty,
                });
            }
            if let Some(b) = c.upper {
                sides.push(Side {
                    row,
                    upper: true,
                    sign: T::one(),
                    beta: b.value,
                    penalty: b.penalty,
                });
            }
        }
        let pairs = sides.len() + sides.iter().filter(|s| s.penalty.is_some()).count();
        Self {
            qp,
            settings,
            sides,
            pairs,
        }
    }

    fn row_dot(&self, row: usize, x: &[T]) -> T {
        self.qp.constraints[row].eval(x)
    }

    fn residuals(&self, it: &Iterate<T>) -> Residuals<T> {
        let n = self.qp.n;
        let mut rx = vec![T::zero(); n];
        let mut hx_norm = T::zero();
        for i in 0..n {
            let mut hx = T::zero();
            for j in 0..n {
                hx += self.qp.hessian[i * n + j] * it.x[j];
            }
            hx_norm = hx_norm.max(hx.abs());
            rx[i] = hx + self.qp.gradient[i];
        }
        let mut atl = vec![T::zero(); n];
        let mut rt = Vec::with_capacity(self.sides.len());
        let mut rs = Vec::with_capacity(self.sides.len());
        let mut prim_scale = T::zero();
        let mut slack_scale = T::zero();
        let mut comp = T::zero();
        for (k, side) in self.sides.iter().enumerate() {
            let c = &self.qp.constraints[side.row];
            let w = side.sign * it.lam[k];
            for (j, &cj) in c.coeffs.iter().enumerate() {
                atl[c.offset + j] += w * cj;
            }
            let ax = side.sign * c.eval(&it.x);
            prim_scale = prim_scale.max(ax.abs()).max(side.beta.abs());
            rt.push(it.t[k] + ax - side.beta - it.sig[k]);
            comp += it.t[k] * it.lam[k];
            match side.penalty {
                Some(p) => {
                    rs.push(p.quadratic * it.sig[k] + p.linear - it.lam[k] - it.nu[k]);
                    slack_scale = slack_scale
                        .max((p.quadratic * it.sig[k]).abs())
                        .max(p.linear.abs())
                        .max(it.lam[k]);
                    comp += it.sig[k] * it.nu[k];
                }
                None => rs.push(T::zero()),
            }
        }
        let mut g_norm = T::zero();
        let mut atl_norm = T::zero();
        for i in 0..n {
            rx[i] += atl[i];
            g_norm = g_norm.max(self.qp.gradient[i].abs());
            atl_norm = atl_norm.max(atl[i].abs());
        }
        let mu = if self.pairs > 0 {
            comp / T::from_usize(self.pairs).unwrap()
        } else {
            T::zero()
        };
        let inf_norm = |v: &[T]| v.iter().fold(T::zero(), |m, &e| m.max(e.abs()));
        let dual = inf_norm(&rx) / (T::one() + hx_norm.max(g_norm).max(atl_norm));
        let prim = inf_norm(&rt) / (T::one() + prim_scale);
        let slack = inf_norm(&rs) / (T::one() + slack_scale);
        let gap = mu / (T::one() + self.objective(it).abs());
        Residuals {
            rx,
            rt,
            rs,
            mu,
            scaled: dual.max(prim).max(slack).max(gap),
        }
    }

    fn objective(&self, it: &Iterate<T>) -> T {
        let mut f = self.qp.quadratic_objective(&it.x);
        for (k, side) in self.sides.iter().enumerate() {
            if let Some(p) = side.penalty {
                f += T::half() * p.quadratic * it.sig[k] * it.sig[k] + p.linear * it.sig[k];
            }
        }
        f
    }

    /// Per-side weights `w` of the reduced system, plus `1 / Q` for soft sides.
    fn weights(&self, it: &Iterate<T>) -> (Vec<T>, Vec<T>) {
        let mut w = Vec::with_capacity(self.sides.len());
        let mut inv_q = Vec::with_capacity(self.sides.len());
        for (k, side) in self.sides.iter().enumerate() {
            let iq = match side.penalty {
                Some(p) => T::one() / (p.quadratic + it.nu[k] / it.sig[k]),
                None => T::zero(),
            };
            inv_q.push(iq);
            w.push(T::one() / (it.t[k] / it.lam[k] + iq));
        }
        (w, inv_q)
    }

    fn assemble(&self, w: &[T], reg: T) -> Vec<T> {
        let n = self.qp.n;
        let mut k = self.qp.hessian.clone();
        for i in 0..n {
            k[i * n + i] += reg;
        }
        let mut row_weight = vec![T::zero(); self.qp.constraints.len()];
        for (side, &wk) in self.sides.iter().zip(w) {
            row_weight[side.row] += wk;
        }
        for (c, &rw) in self.qp.constraints.iter().zip(&row_weight) {
            if rw == T::zero() {
                continue;
            }
            for (i, &ci) in c.coeffs.iter().enumerate() {
                let wci = rw * ci;
                if wci == T::zero() {
                    continue;
                }
                let base = (c.offset + i) * n + c.offset;
                for (j, &cj) in c.coeffs.iter().enumerate().take(i + 1) {
                    k[base + j] += wci * cj;
                }
            }
        }
        k
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        it: &Iterate<T>,
        res: &Residuals<T>,
        chol: &[T],
        w: &[T],
        inv_q: &[T],
        target_t: &[T],
        target_s: &[T],
    ) -> Direction<T> {
        let n = self.qp.n;
        let m = self.sides.len();
        let mut rhs: Vec<T> = res.rx.iter().map(|&r| -r).collect();
        let mut e = vec![T::zero(); m];
        let mut q = vec![T::zero(); m];
        let mut r_tl = vec![T::zero(); m];
        let mut r_sn = vec![T::zero(); m];
        for (k, side) in self.sides.iter().enumerate() {
            r_tl[k] = it.t[k] * it.lam[k] - target_t[k];
            if side.penalty.is_some() {
                r_sn[k] = it.sig[k] * it.nu[k] - target_s[k];
                q[k] = (-res.rs[k] - r_sn[k] / it.sig[k]) * inv_q[k];
            }
            e[k] = res.rt[k] - r_tl[k] / it.lam[k] - q[k];
            let c = &self.qp.constraints[side.row];
            let f = side.sign * w[k] * e[k];
            for (j, &cj) in c.coeffs.iter().enumerate() {
                rhs[c.offset + j] -= f * cj;
            }
        }
        let dx = cholesky_solve(chol, n, rhs);
        let mut dir = Direction {
            dt: vec![T::zero(); m],
            dlam: vec![T::zero(); m],
            dsig: vec![T::zero(); m],
            dnu: vec![T::zero(); m],
            dx,
        };
        for (k, side) in self.sides.iter().enumerate() {
            let adx = side.sign * self.row_dot(side.row, &dir.dx);
            let dl = w[k] * (adx + e[k]);
            dir.dlam[k] = dl;
            dir.dt[k] = (-r_tl[k] - it.t[k] * dl) / it.lam[k];
            if side.penalty.is_some() {
                let ds = dl * inv_q[k] + q[k];
                dir.dsig[k] = ds;
                dir.dnu[k] = (-r_sn[k] - it.nu[k] * ds) / it.sig[k];
            }
        }
        dir
    }

    fn max_step(&self, it: &Iterate<T>, d: &Direction<T>) -> T {
        let mut alpha = T::max_value();
        let mut limit = |v: T, dv: T| {
            if dv < T::zero() {
                alpha = alpha.min(-v / dv);
            }
        };
        for (k, side) in self.sides.iter().enumerate() {
            limit(it.t[k], d.dt[k]);
            limit(it.lam[k], d.dlam[k]);
            if side.penalty.is_some() {
                limit(it.sig[k], d.dsig[k]);
                limit(it.nu[k], d.dnu[k]);
            }
        }
        alpha
    }

    fn complementarity_after(&self, it: &Iterate<T>, d: &Direction<T>, alpha: T) -> T {
        let mut comp = T::zero();
        for (k, side) in self.sides.iter().enumerate() {
            comp += (it.t[k] + alpha * d.dt[k]) * (it.lam[k] + alpha * d.dlam[k]);
            if side.penalty.is_some() {
                comp += (it.sig[k] + alpha * d.dsig[k]) * (it.nu[k] + alpha * d.dnu[k]);
            }
        }
        comp / T::from_usize(self.pairs.max(1)).unwrap()
    }

    /// One predictor-corrector step, `None` when the system cannot be factored.
    fn step(&self, it: &Iterate<T>, res: &Residuals<T>) -> Option<Iterate<T>> {
        let n = self.qp.n;
        let m = self.sides.len();
        let (w, inv_q) = self.weights(it);
        let chol = self.factor(&w)?;
        let zeros = vec![T::zero(); m];
        let aff = self.direction(it, res, &chol, &w, &inv_q, &zeros, &zeros);
        let alpha_aff = self.max_step(it, &aff);
        let mu_aff = self.complementarity_after(it, &aff, alpha_aff.min(T::one()));
        let centering = if res.mu > T::zero() {
            (mu_aff / res.mu).powi(3).min(T::one())
        } else {
            T::zero()
        };
        let sigma_mu = centering * res.mu;
        let target_t: Vec<T> = (0..m).map(|k| sigma_mu - aff.dt[k] * aff.dlam[k]).collect();
        let target_s: Vec<T> = (0..m).map(|k| sigma_mu - aff.dsig[k] * aff.dnu[k]).collect();
        let dir = self.direction(it, res, &chol, &w, &inv_q, &target_t, &target_s);
        let alpha = (self.max_step(it, &dir) * T::lit(0.995)).min(T::one());
        let mut next = it.clone();
        for i in 0..n {
            next.x[i] += alpha * dir.dx[i];
        }
        for (k, side) in self.sides.iter().enumerate() {
            next.t[k] += alpha * dir.dt[k];
            next.lam[k] += alpha * dir.dlam[k];
            if side.penalty.is_some() {
                next.sig[k] += alpha * dir.dsig[k];
                next.nu[k] += alpha * dir.dnu[k];
            }
        }
        Some(next)
    }

    fn run(&self) -> QpSolution<T> {
        let mut it = self.initial_point();
        let tol = self.settings.tolerance;
        // Once converged, a few extra iterations sharpen the active set guess
        // for polishing. The best converged iterate is kept if they stall.
        let refine_tol = tol * T::lit(1e-4);
        let mut refine_left = 8;
        let mut status = QpStatus::MaxIterations;
        let mut iterations = 0;
        let mut res = self.residuals(&it);
        let mut best: Option<(Iterate<T>, T)> = None;
        loop {
            if !res.scaled.is_finite() || !it.is_finite() {
                status = QpStatus::NumericalFailure;
                break;
            }
            if res.scaled <= tol && best.as_ref().map_or(true, |b| res.scaled < b.1) {
                best = Some((it.clone(), res.scaled));
            }
            if best.is_some() {
                if res.scaled <= refine_tol || refine_left == 0 {
                    break;
                }
                refine_left -= 1;
            }
            if iterations >= self.settings.max_iterations {
                break;
            }
            iterations += 1;
            match self.step(&it, &res) {
                Some(next) => it = next,
                None => {
                    status = QpStatus::NumericalFailure;
                    break;
                }
            }
            res = self.residuals(&it);
        }
        let mut residual = res.scaled;
        if let Some((b, r)) = best {
            it = b;
            residual = r;
            status = QpStatus::Converged;
            if let Some(polished) = self.polish(&it) {
                let f = self.objective(&it);
                if self.objective(&polished) <= f + tol * (T::one() + f.abs()) {
                    it = polished;
                }
            }
        }
        let rows = self.qp.constraints.len();
        let mut sol = QpSolution {
            objective: self.objective(&it),
            residual,
            iterations,
            status,
            lower_slack: vec![T::zero(); rows],
            upper_slack: vec![T::zero(); rows],
            lower_dual: vec![T::zero(); rows],
            upper_dual: vec![T::zero(); rows],
            x: it.x,
        };
        for (k, side) in self.sides.iter().enumerate() {
            let (slack, dual) = if side.upper {
                (&mut sol.upper_slack, &mut sol.upper_dual)
            } else {
                (&mut sol.lower_slack, &mut sol.lower_dual)
            };
            slack[side.row] = it.sig[k];
            dual[side.row] = it.lam[k];
        }
        sol
    }

    /// Mehrotra style start: one affine step from a unit point, then every
    /// slack and multiplier is pushed back to at least one.
    fn initial_point(&self) -> Iterate<T> {
        let n = self.qp.n;
        let m = self.sides.len();
        let soft_one = |s: &Side<T>| if s.penalty.is_some() { T::one() } else { T::zero() };
        let mut it = Iterate {
            x: vec![T::zero(); n],
            t: vec![T::one(); m],
            lam: vec![T::one(); m],
            sig: self.sides.iter().map(soft_one).collect(),
            nu: self.sides.iter().map(soft_one).collect(),
        };
        let res = self.residuals(&it);
        let (w, inv_q) = self.weights(&it);
        let Some(chol) = self.factor(&w) else {
            return it;
        };
        let zeros = vec![T::zero(); m];
        let d = self.direction(&it, &res, &chol, &w, &inv_q, &zeros, &zeros);
        if d.dx.iter().any(|v| !v.is_finite()) {
            return it;
        }
        let shift = |v: T, dv: T| (v + dv).abs().max(T::one());
        it.x = d.dx;
        for (k, side) in self.sides.iter().enumerate() {
            it.t[k] = shift(it.t[k], d.dt[k]);
            it.lam[k] = shift(it.lam[k], d.dlam[k]);
            if side.penalty.is_some() {
                it.sig[k] = shift(it.sig[k], d.dsig[k]);
                it.nu[k] = shift(it.nu[k], d.dnu[k]);
            }
        }
        it
    }

    /// Primal active set refinement of a converged iterate. Interior points
    /// are only accurate to about `sqrt(mu)` on degenerate constraints (zero
    /// multiplier at an active bound). Starting from the working set the
    /// iterate suggests, each round moves toward the minimizer on the working
    /// set, stopping at the first side that would switch state, and releases
    /// one side with a wrong signed multiplier once the minimizer is reached.
    /// A soft side is `Inactive` (no slack, row below its bound), `Active`
    /// (no slack, row on its bound) or `Penalized` (positive slack).
    /// A side that blocks the very step after its own release can only do so
    /// through rounding on nearly dependent rows; it is pinned to the working
    /// set so the loop cannot cycle.
    /// Returns the point once it passes the optimality check, or `None`.
    fn polish(&self, it: &Iterate<T>) -> Option<Iterate<T>> {
        let m = self.sides.len();
        let excess_at = |k: usize, x: &[T]| {
            let side = &self.sides[k];
            side.sign * self.row_dot(side.row, x) - side.beta
        };
        let near = self.settings.tolerance;
        let state_at = |k: usize, x: &[T]| {
            let e = excess_at(k, x);
            let band = near * (T::one() + self.sides[k].beta.abs());
            if e.abs() <= band {
                Work::Active
            } else if e > T::zero() && self.sides[k].penalty.is_some() {
                Work::Penalized
            } else {
                Work::Inactive
            }
        };
        let mut state: Vec<Work> = (0..m).map(|k| state_at(k, &it.x)).collect();
        let mut x = it.x.clone();
        let mut pinned = vec![false; m];
        let mut released: Option<usize> = None;
        let budget = 2 * (self.qp.n + m).max(10);
        for _ in 0..budget {
            let (target, y) = self.solve_working_set(&state)?;
            let step: Vec<T> = target.iter().zip(&x).map(|(&t, &c)| t - c).collect();
            let mut alpha = T::one();
            let mut blocking = None;
            for k in 0..m {
                let slope = excess_at(k, &step) + self.sides[k].beta;
                let here = excess_at(k, &x);
                let hit = match state[k] {
                    Work::Inactive if slope > T::zero() => (-here).max(T::zero()) / slope,
                    Work::Penalized if slope < T::zero() => here.max(T::zero()) / -slope,
                    _ => continue,
                };
                if hit < alpha {
                    alpha = hit;
                    blocking = Some(k);
                }
            }
            for (xi, &si) in x.iter_mut().zip(&step) {
                *xi += alpha * si;
            }
            if let Some(k) = blocking {
                if released == Some(k) {
                    pinned[k] = true;
                }
                released = None;
                state[k] = Work::Active;
                continue;
            }
            x = target;
            let scale = y.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
            let dtol = T::epsilon().sqrt() * scale;
            let mut release: Option<(usize, Work, T)> = None;
            for (k, side) in self.sides.iter().enumerate() {
                if state[k] != Work::Active || pinned[k] {
                    continue;
                }
                let (next, gap) = if y[k] < -dtol {
                    (Work::Inactive, -y[k])
                } else {
                    match side.penalty {
                        Some(p) if y[k] > p.linear + dtol => (Work::Penalized, y[k] - p.linear),
                        _ => continue,
                    }
                };
                if release.map_or(true, |(_, _, g)| gap > g) {
                    release = Some((k, next, gap));
                }
            }
            match release {
                Some((k, next, _)) => {
                    state[k] = next;
                    released = Some(k);
                }
                None => {
                    let mut out = it.clone();
                    for (k, side) in self.sides.iter().enumerate() {
                        let e = excess_at(k, &x);
                        out.t[k] = (-e).max(T::zero());
                        out.lam[k] = y[k].max(T::zero());
                        if let Some(p) = side.penalty {
                            out.sig[k] = e.max(T::zero());
                            if state[k] == Work::Penalized {
                                out.lam[k] = p.quadratic * out.sig[k] + p.linear;
                            }
                            out.nu[k] = (p.quadratic * out.sig[k] + p.linear - out.lam[k])
                                .max(T::zero());
                        }
                    }
                    out.x = x;
                    return out.is_finite().then_some(out);
                }
            }
        }
        None
    }

    /// Minimizes the objective with active sides held as equalities and
    /// penalized sides charged their slack penalty. Returns the point and the
    /// multiplier of every active side (zero elsewhere).
    fn solve_working_set(&self, state: &[Work]) -> Option<(Vec<T>, Vec<T>)> {
        let n = self.qp.n;
        let mut p = self.qp.hessian.clone();
        let mut q = self.qp.gradient.clone();
        let mut equalities = Vec::new();
        for (k, side) in self.sides.iter().enumerate() {
            let c = &self.qp.constraints[side.row];
            match (state[k], side.penalty) {
                (Work::Penalized, Some(pen)) => {
                    let lin = pen.linear - pen.quadratic * side.beta;
                    for (i, &ci) in c.coeffs.iter().enumerate() {
                        q[c.offset + i] += lin * side.sign * ci;
                        for (j, &cj) in c.coeffs.iter().enumerate().take(i + 1) {
                            p[(c.offset + i) * n + c.offset + j] += pen.quadratic * ci * cj;
                        }
                    }
                }
                (Work::Active, _) => equalities.push(k),
                _ => {}
            }
        }
        for i in 0..n {
            p[i * n + i] += self.settings.regularization;
        }
        if !cholesky_in_place(&mut p, n) {
            return None;
        }
        // Schur complement of the KKT system: with W = P^-1 A' and
        // S = A W, the multipliers solve S y = A x0 - b for x0 = -P^-1 q.
        // Dependent equalities make S singular, hence the small shift and
        // the refinement passes.
        let me = equalities.len();
        let row = |k: usize| {
            let side = &self.sides[k];
            let c = &self.qp.constraints[side.row];
            let mut a = vec![T::zero(); n];
            for (i, &ci) in c.coeffs.iter().enumerate() {
                a[c.offset + i] = side.sign * ci;
            }
            a
        };
        let w: Vec<Vec<T>> = equalities.iter().map(|&k| cholesky_solve(&p, n, row(k))).collect();
        let mut schur = vec![T::zero(); me * me];
        for (e, &k) in equalities.iter().enumerate() {
            let side = &self.sides[k];
            for f in 0..=e {
                schur[e * me + f] = side.sign * self.row_dot(side.row, &w[f]);
            }
        }
        let shift = (0..me).fold(T::zero(), |m, e| m.max(schur[e * me + e])) * T::epsilon() * T::lit(1e2);
        for e in 0..me {
            schur[e * me + e] += shift;
        }
        if me > 0 && !cholesky_in_place(&mut schur, me) {
            return None;
        }
        let mut x = cholesky_solve(&p, n, q.iter().map(|&v| -v).collect());
        let mut y = vec![T::zero(); self.sides.len()];
        let mut best: Option<(T, Vec<T>, Vec<T>)> = None;
        for pass in 0..=12 {
            let mut worst = T::zero();
            let r: Vec<T> = equalities
                .iter()
                .map(|&k| {
                    let side = &self.sides[k];
                    let viol = side.sign * self.row_dot(side.row, &x) - side.beta;
                    worst = worst.max(viol.abs() / (T::one() + side.beta.abs()));
                    viol
                })
                .collect();
            if best.as_ref().map_or(true, |b| worst < b.0) {
                best = Some((worst, x.clone(), y.clone()));
            }
            if worst <= T::epsilon() * T::lit(1e2) || pass == 12 {
                break;
            }
            let dy = cholesky_solve(&schur, me, r);
            for (e, &k) in equalities.iter().enumerate() {
                y[k] += dy[e];
                for i in 0..n {
                    x[i] -= w[e][i] * dy[e];
                }
            }
        }
        best.filter(|b| b.0 <= T::epsilon().sqrt()).map(|(_, x, y)| (x, y))
    }

    fn factor(&self, w: &[T]) -> Option<Vec<T>> {
        let mut reg = self.settings.regularization;
        for _ in 0..4 {
            let mut k = self.assemble(w, reg);
            if cholesky_in_place(&mut k, self.qp.n) {
                return Some(k);
            }
            reg = (reg * T::lit(100.0)).max(T::epsilon());
        }
        None
    }
}

/// Lower Cholesky factor of the lower triangle of `a`, in place. Returns false
/// when the matrix is not numerically positive definite.
fn cholesky_in_place<T: Scalar>(a: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn cholesky_solve<T: Scalar>(l: &[T], n: usize, mut b: Vec<T>) -> Vec<T> {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(i: usize) -> LinearConstraint<f64> {
        LinearConstraint {
            offset: i,
            coeffs: vec![1.0],
            lower: None,
            upper: None,
        }
    }

    #[test]
    fn unconstrained_minimum() {
        // min (x - 3)^2 + (y + 1)^2
        let mut qp = DenseQp::new(2);
        qp.add_squared_term(1.0, 0, &[1.0], -3.0);
        qp.add_squared_term(1.0, 1, &[1.0], 1.0);
        let sol = solve_qp(&qp, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Converged);
        assert_relative_eq!(sol.x[0], 3.0, epsilon = 1e-7);
        assert_relative_eq!(sol.x[1], -1.0, epsilon = 1e-7);
    }

    #[test]
    fn hard_box_is_respected() {
        // min 1/2 (4x^2 + 4y^2) - x - y, 0 <= x, y <= 0.1  -> (0.1, 0.1)
        let mut qp = DenseQp::new(2);
        qp.hessian = vec![4.0, 0.0, 0.0, 4.0];
        qp.gradient = vec![-1.0, -1.0];
        for i in 0..2 {
            let mut c = unit(i);
            c.lower = Some(Bound::hard(0.0));
            c.upper = Some(Bound::hard(0.1));
            qp.push(c);
        }
        let sol = solve_qp(&qp, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Converged);
        assert_relative_eq!(sol.x[0], 0.1, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], 0.1, epsilon = 1e-6);
        assert!(sol.upper_dual[0] > 0.5);
    }

    #[test]
    fn general_row_matches_known_solution() {
        // min 1/2 x^2 + 1/2 y^2 + x  s.t. x + 2y >= 1  ->  (-0.6, 0.8)
        let mut qp = DenseQp::new(2);
        qp.hessian = vec![1.0, 0.0, 0.0, 1.0];
        qp.gradient = vec![1.0, 0.0];
        qp.push(LinearConstraint {
            offset: 0,
            coeffs: vec![1.0, 2.0],
            lower: Some(Bound::hard(1.0)),
            upper: None,
        });
        let sol = solve_qp(&qp, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Converged);
        assert_relative_eq!(sol.x[0], -0.6, epsilon = 1e-6);
        assert_relative_eq!(sol.x[1], 0.8, epsilon = 1e-6);
    }

    #[test]
    fn exact_penalty_keeps_slack_zero_when_feasible() {
        // min (x - 2)^2 with soft x <= 1: linear weight 10 exceeds the multiplier 2.
        let mut qp = DenseQp::new(1);
        qp.add_squared_term(1.0, 0, &[1.0], -2.0);
        let mut c = unit(0);
        c.upper = Some(Bound::soft(
            1.0,
            SoftPenalty {
                quadratic: 100.0,
                linear: 10.0,
            },
        ));
        qp.push(c);
        let sol = solve_qp(&qp, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Converged);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-6);
        assert!(sol.upper_slack[0] < 1e-6);
    }

    #[test]
    fn soft_constraint_relaxes_conflict() {
        // x >= 2 hard, x <= 1 soft with 1/2 * 10 s^2 + s: slack settles at 1.
        let mut qp = DenseQp::new(1);
        qp.push(LinearConstraint {
            offset: 0,
            coeffs: vec![1.0],
            lower: Some(Bound::hard(2.0)),
            upper: Some(Bound::soft(
                1.0,
                SoftPenalty {
                    quadratic: 10.0,
                    linear: 1.0,
                },
            )),
        });
        let sol = solve_qp(&qp, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Converged);
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-6);
        assert_relative_eq!(sol.upper_slack[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.objective, 6.0, epsilon = 1e-5);
    }

    #[test]
    fn infeasible_hard_problem_does_not_converge() {
        let mut qp = DenseQp::new(1);
        qp.push(LinearConstraint {
            offset: 0,
            coeffs: vec![1.0],
            lower: Some(Bound::hard(2.0)),
            upper: Some(Bound::hard(1.0)),
        });
        let sol = solve_qp(&qp, &QpSettings::default());
        assert_ne!(sol.status, QpStatus::Converged);
    }

    #[test]
    fn works_in_f32() {
        let mut qp = DenseQp::<f32>::new(2);
        qp.hessian = vec![1.0, 0.0, 0.0, 1.0];
        qp.gradient = vec![1.0, 0.0];
        qp.push(LinearConstraint {
            offset: 0,
            coeffs: vec![1.0, 2.0],
            lower: Some(Bound::hard(1.0)),
            upper: None,
        });
        let sol = solve_qp(&qp, &QpSettings::default());
        assert_eq!(sol.status, QpStatus::Converged);
        assert!((sol.x[0] + 0.6).abs() < 1e-3);
        assert!((sol.x[1] - 0.8).abs() < 1e-3);
    }
}
