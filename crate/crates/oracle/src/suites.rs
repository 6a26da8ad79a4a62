//! Seeded randomized suites comparing the controller against the oracles.

use std::fmt;
use std::str::FromStr;

use acc_core::{
    check_state_collision, solve, ControllerConfig64, Obstacle64, Point64, SolveStatus,
    VehicleParams64, VehicleState64, VelocityLimits, VelocityProblem64, VelocityWeights64,
};
use acc_sim::{run_scenario_with, CommandMode, RunOptions, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::geometry::{body_hits, dense_collision};
use crate::qp::{self, solve_oracle};

pub const DEFAULT_SEED: u64 = 0x00ac_c5a5;

/// Tolerance on the objective gap to the QP oracle, relative to its objective.
pub const QP_OBJECTIVE_RTOL: f64 = 1e-4;
/// Tolerance on hard speed bounds and on the dynamics of the returned profile.
pub const QP_FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Tree,
    Qp,
    ClosedLoop,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Tree, Suite::Qp, Suite::ClosedLoop];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Tree => "tree",
            Suite::Qp => "qp",
            Suite::ClosedLoop => "closed-loop",
        }
    }

    pub fn default_count(&self) -> usize {
        match self {
            Suite::Tree => 50,
            Suite::Qp => 20,
            Suite::ClosedLoop => 100,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}` (expected tree, qp or closed-loop)"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub index: usize,
    pub seed: u64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub cases: Vec<CaseOutcome>,
    /// Draws skipped because they fell inside the suite's ambiguity band.
    pub excluded: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.passed).count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseOutcome> {
        self.cases.iter().filter(|c| !c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }
}

/// Seed of case `index` in a run seeded with `seed` (splitmix64), so cases can
/// be sharded or replayed one at a time.
pub fn case_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn run_suite(suite: Suite, seed: u64, count: usize) -> SuiteReport {
    match suite {
        Suite::Tree => verify_tree(seed, count),
        Suite::Qp => verify_qp(seed, count),
        Suite::ClosedLoop => verify_closed_loop(seed, count),
    }
}

/// Random convex polygon: a rectangle, or 3 to 7 points on a jittered circle.
pub fn random_convex(rng: &mut impl Rng, center: Point64, size: (f64, f64)) -> Obstacle64 {
    loop {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = angle.sin_cos();
        let pts: Vec<Point64> = if rng.random_bool(0.4) {
            let hl = rng.random_range(size.0..size.1) * 0.5;
            let hw = rng.random_range(size.0..size.1) * 0.5;
            [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].to_vec()
        } else {
            let k = rng.random_range(3..=7);
            let r = rng.random_range(size.0..size.1) * 0.5;
            let mut phis: Vec<f64> = (0..k)
                .map(|i| (i as f64 + rng.random_range(-0.3..0.3)) * std::f64::consts::TAU / k as f64)
                .collect();
            phis.sort_by(f64::total_cmp);
            phis.iter().map(|p| (r * p.cos(), r * p.sin())).collect()
        }
        .into_iter()
        .map(|(u, w)| Point64::new(center.x + c * u - s * w, center.y + s * u + c * w))
        .collect();
        if let Ok(o) = Obstacle64::new(pts) {
            return o;
        }
    }
}

/// Collision checker against the dense oracle. Cases whose ellipse margin is
/// within the edge sampling spacing are drawn again, up to a bounded number of
/// attempts, and counted as excluded.
pub fn verify_tree(seed: u64, count: usize) -> SuiteReport {
    let params = VehicleParams64::passenger_car();
    let cfg = ControllerConfig64::default();
    let spacing = cfg.edge_spacing(&params);
    let mut cases = Vec::with_capacity(count);
    let mut excluded = 0;
    let mut draw = 0u64;
    while cases.len() < count && draw < 100 * count as u64 + 100 {
        let cs = case_seed(seed, draw);
        draw += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cs);
        let z = VehicleState64::new(
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            0.0,
            0.0,
        );
        let dist = rng.random_range(0.0..6.0);
        let bearing: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let center = Point64::new(z.x + dist * bearing.cos(), z.y + dist * bearing.sin());
        let obstacle = random_convex(&mut rng, center, (0.2, 3.0));
        let verdict = dense_collision(&z, obstacle.vertices(), &params);
        if verdict.margin <= spacing {
            excluded += 1;
            continue;
        }
        let fast = check_state_collision(&z, std::slice::from_ref(&obstacle), &params, &cfg);
        cases.push(CaseOutcome {
            index: cases.len(),
            seed: cs,
            passed: fast == verdict.collides,
            detail: format!(
                "checker {fast}, oracle {} (margin {:.3} m)",
                verdict.collides, verdict.margin
            ),
        });
    }
    SuiteReport {
        suite: Suite::Tree,
        seed,
        cases,
        excluded,
    }
}

pub fn random_velocity_problem(rng: &mut impl Rng) -> VelocityProblem64 {
    let n = rng.random_range(2..=8);
    let kappa0: f64 = rng.random_range(-0.17..0.17);
    let growth = rng.random_range(0.0..0.3);
    VelocityProblem64 {
        v_curr: rng.random_range(0.0..8.0),
        a_curr: rng.random_range(-3.5..1.8),
        v_des: rng.random_range(0.0..8.0),
        s_safe: rng.random_range(0.0..15.0),
        kappa_crit: (0..n)
            .map(|k| (kappa0 * (1.0 + growth * k as f64)).clamp(-0.19, 0.19))
            .collect(),
        steps: n,
        sample_time: rng.random_range(0.05..0.3),
        weights: VelocityWeights64::default(),
        limits: VelocityLimits::from(&VehicleParams64::passenger_car()),
        v_cap: 20.0,
    }
}

fn check_qp_case(p: &VelocityProblem64) -> Result<String, String> {
    let sol = solve(p).map_err(|e| format!("solver error: {e}"))?;
    if sol.status == SolveStatus::Failed {
        return Err("solver reported failure".into());
    }
    let (s, v, a) = qp::rollout(p, &sol.j);
    let dyn_err = s
        .iter()
        .zip(&sol.s)
        .chain(v.iter().zip(&sol.v))
        .chain(a.iter().zip(&sol.a))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if dyn_err > QP_FEASIBILITY_TOL {
        return Err(format!("profile off the dynamics by {dyn_err:.2e}"));
    }
    let hard = qp::hard_violation(p, &sol.v);
    if hard > QP_FEASIBILITY_TOL {
        return Err(format!("hard speed bound violated by {hard:.2e}"));
    }
    let oracle = solve_oracle(p);
    let f = qp::objective(p, &sol.j);
    let rel = (f - oracle.objective).abs() / oracle.objective.abs().max(1e-9);
    let detail = format!(
        "N={} objective {f:.9e} oracle {:.9e} rel {rel:.1e}",
        p.steps, oracle.objective
    );
    if rel > QP_OBJECTIVE_RTOL {
        return Err(detail);
    }
    Ok(detail)
}

pub fn verify_qp(seed: u64, count: usize) -> SuiteReport {
    let cases = (0..count)
        .into_par_iter()
        .map(|i| {
            let cs = case_seed(seed, i as u64);
            let p = random_velocity_problem(&mut ChaCha8Rng::seed_from_u64(cs));
            let (passed, detail) = match check_qp_case(&p) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CaseOutcome {
                index: i,
                seed: cs,
                passed,
                detail,
            }
        })
        .collect();
    SuiteReport {
        suite: Suite::Qp,
        seed,
        cases,
        excluded: 0,
    }
}

/// Episode length of the adversarial closed-loop suite (s).
pub const EPISODE_DURATION: f64 = 20.0;

/// Random obstacle field ahead of a vehicle parked at the origin. No obstacle
/// touches a disc of 6 m around the start.
pub fn adversarial_scenario(rng: &mut impl Rng) -> Scenario {
    let mut scn = Scenario::bundled("empty-road").expect("bundled scenario");
    scn.name = "adversarial".into();
    scn.duration = EPISODE_DURATION;
    scn.start = VehicleState64::new(0.0, 0.0, 0.0, 0.0, 0.0);
    let count = rng.random_range(4..=10);
    while scn.obstacles.len() < count {
        let center = Point64::new(rng.random_range(-10.0..60.0), rng.random_range(-15.0..15.0));
        let o = random_convex(rng, center, (0.5, 4.0));
        let clear = o
            .vertices()
            .iter()
            .all(|p| p.x.hypot(p.y) > 6.0);
        if clear && !o.contains(Point64::new(0.0, 0.0)) {
            scn.obstacles.push(o);
        }
    }
    scn
}

/// Piecewise-constant steering within `+-delta_max`, held 0.2 to 2 s, with a
/// constant 5 m/s speed request.
pub struct AdversarialOperator {
    rng: ChaCha8Rng,
    delta_max: f64,
    value: f64,
    until: f64,
}

impl AdversarialOperator {
    pub fn new(seed: u64, delta_max: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            delta_max,
            value: 0.0,
            until: 0.0,
        }
    }

    pub fn command(&mut self, t: f64) -> (f64, f64) {
        if t >= self.until {
            self.value = self.rng.random_range(-self.delta_max..=self.delta_max);
            self.until = t + self.rng.random_range(0.2..2.0);
        }
        (self.value, 5.0)
    }
}

fn run_episode(cs: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cs);
    let scn = adversarial_scenario(&mut rng);
    let mut op = AdversarialOperator::new(rng.random(), scn.params.delta_max);
    let mut source = |now: std::time::Duration, _: &VehicleState64| Some(op.command(now.as_secs_f64()));
    let opts = RunOptions {
        stop_on_standstill: false,
        ..RunOptions::default()
    };
    let run = run_scenario_with(&scn, CommandMode::External(&mut source), opts)
        .map_err(|e| format!("simulation error: {e}"))?;
    let poses = run
        .log
        .rows
        .iter()
        .map(|r| (r.t, VehicleState64::new(r.x, r.y, r.theta, r.delta, r.v)))
        .chain(std::iter::once((f64::NAN, run.final_state)));
    for (t, z) in poses {
        for (k, o) in scn.obstacles.iter().enumerate() {
            if body_hits(&z, &scn.params, o.vertices()) {
                return Err(format!("body meets obstacle {k} at t = {t:.2} (x {:.2}, y {:.2})", z.x, z.y));
            }
        }
    }
    let travelled = run.final_state.x.hypot(run.final_state.y);
    Ok(format!(
        "{} obstacles, {} ticks, {} override, ended {travelled:.1} m from start",
        scn.obstacles.len(),
        run.log.rows.len(),
        run.log.override_ticks()
    ))
}

pub fn verify_closed_loop(seed: u64, count: usize) -> SuiteReport {
    let cases = (0..count)
        .into_par_iter()
        .map(|i| {
            let cs = case_seed(seed, i as u64);
            let (passed, detail) = match run_episode(cs) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CaseOutcome {
                index: i,
                seed: cs,
                passed,
                detail,
            }
        })
        .collect();
    SuiteReport {
        suite: Suite::ClosedLoop,
        seed,
        cases,
        excluded: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| case_seed(1, i)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(case_seed(1, 7), a[7]);
        assert_ne!(case_seed(2, 7), a[7]);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn random_obstacles_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let o = random_convex(&mut rng, Point64::new(0.0, 0.0), (0.2, 3.0));
            assert!(o.vertices().len() >= 3);
        }
    }
}
