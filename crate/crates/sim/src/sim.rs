//! Closed loop: operator -> controller -> plant, ticked at the controller rate.

use std::time::Duration;

use acc_core::{AccController64, AccOutput64, OperatorCommand64, VehicleState64};
use serde::{Deserialize, Serialize};

use crate::clearance::body_clearance;
use crate::error::Result;
use crate::log::{SimLog, SimRow};
use crate::operator::scripted_operator;
use crate::plant::plant_step;
use crate::scenario::Scenario;

/// Speeds at or below this count as stopped (m/s).
pub const STANDSTILL_SPEED: f64 = 1e-3;

/// Holds the most recent operator command and decides when it has gone stale.
/// A stale command keeps its steering but asks for zero speed.
#[derive(Debug, Clone)]
pub struct CommandWatchdog {
    timeout: Duration,
    latest: Option<OperatorCommand64>,
}

impl CommandWatchdog {
    pub fn new(timeout: Duration) -> Self {
        Self { timeout, latest: None }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn receive(&mut self, cmd: OperatorCommand64) {
        self.latest = Some(cmd);
    }

    pub fn latest(&self) -> Option<&OperatorCommand64> {
        self.latest.as_ref()
    }

    pub fn is_stale(&self, now: Duration) -> bool {
        self.latest
            .map_or(true, |c| now.saturating_sub(c.timestamp) > self.timeout)
    }

    /// Command to execute at `now` and whether the failsafe is engaged.
    pub fn effective(&self, now: Duration) -> (OperatorCommand64, bool) {
        match self.latest {
            Some(c) if !self.is_stale(now) => (c, false),
            Some(c) => (OperatorCommand64 { v_des: 0.0, ..c }, true),
            None => (
                OperatorCommand64 {
                    delta_des: 0.0,
                    v_des: 0.0,
                    timestamp: now,
                },
                true,
            ),
        }
    }
}

/// Supplies operator input in external-commands mode. `poll` is called once
/// per tick before the controller runs and returns `(delta_des, v_des)` if a
/// new message arrived.
pub trait CommandSource {
    fn poll(&mut self, now: Duration, state: &VehicleState64) -> Option<(f64, f64)>;
}

impl<F: FnMut(Duration, &VehicleState64) -> Option<(f64, f64)>> CommandSource for F {
    fn poll(&mut self, now: Duration, state: &VehicleState64) -> Option<(f64, f64)> {
        self(now, state)
    }
}

pub enum CommandMode<'a> {
    Scripted,
    External(&'a mut dyn CommandSource),
}

#[derive(Debug, Clone)]
pub struct TickRecord {
    pub row: SimRow,
    pub output: AccOutput64,
    pub command: OperatorCommand64,
}

/// One closed-loop instance: owns the controller, the plant state and the
/// operator watchdog.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    controller: AccController64,
    state: VehicleState64,
    accel_measured: f64,
    accel_applied: f64,
    tick: u64,
    watchdog: CommandWatchdog,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let controller =
            AccController64::new(scenario.params, scenario.cfg.clone(), scenario.weights)?;
        let watchdog = CommandWatchdog::new(Duration::from_secs_f64(scenario.command_timeout));
        Ok(Self {
            state: scenario.start,
            scenario,
            controller,
            accel_measured: 0.0,
            accel_applied: 0.0,
            tick: 0,
            watchdog,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn state(&self) -> &VehicleState64 {
        &self.state
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    /// Simulated time of the current tick, `tick * t_s`.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.cfg.sample_time
    }

    pub fn now(&self) -> Duration {
        Duration::from_secs_f64(self.time())
    }

    /// Acceleration measured over the last plant step.
    pub fn measured_accel(&self) -> f64 {
        self.accel_measured
    }

    pub fn watchdog(&self) -> &CommandWatchdog {
        &self.watchdog
    }

    /// What the scripted path tracker would command right now.
    pub fn scripted_command(&self) -> OperatorCommand64 {
        let s = &self.scenario;
        scripted_operator(&self.state, &s.path, s.v_ref, &s.gains, &s.params, &s.cfg, self.now())
    }

    /// Feeds a raw operator command stamped with the current simulated time.
    pub fn receive(&mut self, delta_des: f64, v_des: f64) -> OperatorCommand64 {
        let cmd = OperatorCommand64::clamped(
            delta_des,
            v_des,
            self.now(),
            &self.scenario.params,
            &self.scenario.cfg,
        );
        self.watchdog.receive(cmd);
        cmd
    }

    /// Runs the controller and one plant step under the watchdog's current command.
    pub fn step_external(&mut self) -> Result<TickRecord> {
        let (cmd, failsafe) = self.watchdog.effective(self.now());
        self.step_with(cmd, failsafe)
    }

    /// Runs the controller on `cmd` and advances the plant by one step.
    pub fn step_with(&mut self, cmd: OperatorCommand64, failsafe: bool) -> Result<TickRecord> {
        let s = &self.scenario;
        let z = self.state;
        let output = self
            .controller
            .compute_command(&z, self.accel_measured, cmd.v_des, &s.obstacles);
        let next = plant_step(&z, self.accel_applied, cmd.delta_des, output.v_cmd, &s.params, s.cfg.sample_time)?;
        let status = if output.used_fallback() {
            "fallback"
        } else {
            output.status().as_str()
        };
        let row = SimRow {
            t: self.time(),
            x: z.x,
            y: z.y,
            theta: z.theta,
            delta: z.delta,
            v: z.v,
            a: self.accel_measured,
            delta_des: cmd.delta_des,
            v_des: cmd.v_des,
            v_cmd: output.v_cmd,
            s_safe: output.s_safe,
            override_active: output.override_active,
            status: status.to_string(),
            failsafe,
            u_delta_rate: next.input.delta_rate,
            u_accel: next.input.accel,
            clearance: body_clearance(&z, &s.params, &s.obstacles),
        };
        self.state = next.state;
        self.accel_measured = next.accel;
        self.accel_applied = next.input.accel;
        self.tick += 1;
        Ok(TickRecord { row, output, command: cmd })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Completed,
    Standstill,
    Collision,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::Standstill => "standstill",
            Outcome::Collision => "collision",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// End the run once stopped with a zero command for `standstill_hold` seconds.
    pub stop_on_standstill: bool,
    pub standstill_hold: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stop_on_standstill: true,
            standstill_hold: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub log: SimLog,
    /// Controller wall-clock time per tick, aligned with `log.rows`.
    pub compute_times: Vec<Duration>,
    pub outcome: Outcome,
    /// Position where the final standstill began.
    pub stop_x: Option<f64>,
    pub final_state: VehicleState64,
}

pub fn run_scenario(scenario: &Scenario, mode: CommandMode<'_>) -> Result<RunResult> {
    run_scenario_with(scenario, mode, RunOptions::default())
}

/// Ticks until the duration elapses, a collision is logged, or (optionally)
/// the vehicle has been at standstill with a zero command for the hold time.
pub fn run_scenario_with(
    scenario: &Scenario,
    mut mode: CommandMode<'_>,
    opts: RunOptions,
) -> Result<RunResult> {
    let mut sim = Simulation::new(scenario.clone())?;
    let ticks = scenario.ticks();
    let hold_ticks = (opts.standstill_hold / scenario.cfg.sample_time).round() as u64;
    let mut log = SimLog::default();
    let mut compute_times = Vec::with_capacity(ticks as usize);
    let mut stopped_since: Option<(u64, f64)> = None;
    let mut outcome = Outcome::Completed;

    while sim.tick_count() < ticks {
        let rec = match &mut mode {
            CommandMode::Scripted => {
                let cmd = sim.scripted_command();
                sim.step_with(cmd, false)?
            }
            CommandMode::External(src) => {
                if let Some((d, v)) = src.poll(sim.now(), sim.state()) {
                    sim.receive(d, v);
                }
                sim.step_external()?
            }
        };
        let row = rec.row;
        compute_times.push(rec.output.compute_time);
        let collided = row.clearance <= 0.0;
        let stopped = row.v <= STANDSTILL_SPEED && row.v_cmd <= STANDSTILL_SPEED;
        let tick = sim.tick_count() - 1;
        stopped_since = match (stopped, stopped_since) {
            (false, _) => None,
            (true, None) => Some((tick, row.x)),
            (true, since) => since,
        };
        log.rows.push(row);
        if collided {
            outcome = Outcome::Collision;
            break;
        }
        if let Some((t0, _)) = stopped_since {
            if opts.stop_on_standstill && tick - t0 >= hold_ticks {
                outcome = Outcome::Standstill;
                break;
            }
        }
    }

    Ok(RunResult {
        log,
        compute_times,
        outcome,
        stop_x: stopped_since.map(|(_, x)| x),
        final_state: *sim.state(),
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Sidecar totals written next to a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub outcome: Outcome,
    pub ticks: usize,
    pub sim_time: f64,
    pub stop_x: Option<f64>,
    pub final_x: f64,
    /// `None` when the scenario has no obstacles.
    pub min_clearance: Option<f64>,
    pub override_ticks: usize,
    pub override_duty: f64,
    pub fallback_ticks: usize,
    pub slack_ticks: usize,
    pub failsafe_ticks: usize,
    pub mean_compute_ms: f64,
    pub p99_compute_ms: f64,
    pub max_compute_ms: f64,
    pub seed: u64,
    pub overrides: Vec<String>,
}

impl RunResult {
    pub fn summary(&self, scenario: &Scenario) -> RunSummary {
        let rows = &self.log.rows;
        let n = rows.len();
        let mut ms: Vec<f64> = self.compute_times.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let min_clearance = self.log.min_clearance();
        let count = |f: fn(&SimRow) -> bool| rows.iter().filter(|r| f(r)).count();
        let override_ticks = self.log.override_ticks();
        RunSummary {
            scenario: scenario.name.clone(),
            outcome: self.outcome,
            ticks: n,
            sim_time: n as f64 * scenario.cfg.sample_time,
            stop_x: self.stop_x,
            final_x: self.final_state.x,
            min_clearance: min_clearance.is_finite().then_some(min_clearance),
            override_ticks,
            override_duty: if n == 0 { 0.0 } else { override_ticks as f64 / n as f64 },
            fallback_ticks: count(|r| r.status == "fallback"),
            slack_ticks: count(|r| r.status == "solved-with-slack"),
            failsafe_ticks: count(|r| r.failsafe),
            mean_compute_ms: if n == 0 { 0.0 } else { ms.iter().sum::<f64>() / n as f64 },
            p99_compute_ms: percentile(&ms, 0.99),
            max_compute_ms: ms.last().copied().unwrap_or(0.0),
            seed: scenario.seed,
            overrides: scenario.overrides.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn watchdog_goes_stale_after_timeout() {
        let mut w = CommandWatchdog::new(Duration::from_millis(500));
        let (c, fs) = w.effective(Duration::ZERO);
        assert!(fs);
        assert_eq!((c.delta_des, c.v_des), (0.0, 0.0));
        w.receive(OperatorCommand64 {
            delta_des: 0.2,
            v_des: 5.0,
            timestamp: Duration::from_secs(1),
        });
        let (c, fs) = w.effective(Duration::from_millis(1500));
        assert!(!fs);
        assert_eq!(c.v_des, 5.0);
        let (c, fs) = w.effective(Duration::from_millis(1501));
        assert!(fs);
        assert_eq!((c.delta_des, c.v_des), (0.2, 0.0));
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.99), 99.0);
        assert_eq!(percentile(&v, 1.0), 100.0);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }
}
