//! Library side of the `acc` binary: batch runs with file output, oracle
//! suites, and the teleoperation server.

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use acc_oracle::{run_suite, Suite, SuiteReport};
use acc_sim::{run_scenario, CommandMode, Outcome, RunResult, RunSummary, Scenario, SimError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 8765;

pub const LOG_FILE: &str = "log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.csv";
pub const VELOCITY_FILE: &str = "velocity.csv";
pub const STEERING_FILE: &str = "steering.csv";
pub const TRACE_FILE: &str = "xy.csv";
pub const OBSTACLES_FILE: &str = "obstacles.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("server stopped: {0}")]
    Serve(io::Error),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub outcome: Outcome,
    pub stop_x: Option<f64>,
    /// `None` when the scenario has no obstacles.
    pub min_clearance: Option<f64>,
    pub mean_compute_ms: f64,
    pub log_path: PathBuf,
}

impl RunReport {
    fn new(summary: &RunSummary, log_path: PathBuf) -> Self {
        Self {
            scenario: summary.scenario.clone(),
            outcome: summary.outcome,
            stop_x: summary.stop_x,
            min_clearance: summary.min_clearance,
            mean_compute_ms: summary.mean_compute_ms,
            log_path,
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.9e}")
}

fn write_series(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut out = String::with_capacity(4096);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(num).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_at(path))
}

/// Writes every output file of a finished run into `dir`.
pub fn write_outputs(dir: &Path, scenario: &Scenario, run: &RunResult) -> Result<RunSummary, CliError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let rows = &run.log.rows;

    let log_path = dir.join(LOG_FILE);
    let f = fs::File::create(&log_path).map_err(io_at(&log_path))?;
    let mut w = io::BufWriter::new(f);
    run.log.write_csv(&mut w).and_then(|_| w.flush()).map_err(io_at(&log_path))?;

    write_series(
        &dir.join(VELOCITY_FILE),
        "t,v,v_des,v_cmd,s_safe",
        rows.iter().map(|r| vec![r.t, r.v, r.v_des, r.v_cmd, r.s_safe]),
    )?;
    write_series(
        &dir.join(STEERING_FILE),
        "t,delta,delta_des",
        rows.iter().map(|r| vec![r.t, r.delta, r.delta_des]),
    )?;
    write_series(&dir.join(TRACE_FILE), "x,y", rows.iter().map(|r| vec![r.x, r.y]))?;
    write_series(
        &dir.join(OBSTACLES_FILE),
        "obstacle,x,y",
        scenario.obstacles.iter().enumerate().flat_map(|(i, o)| {
            o.vertices().iter().map(move |p| vec![i as f64, p.x, p.y]).collect::<Vec<_>>()
        }),
    )?;
    write_series(
        &dir.join(TIMING_FILE),
        "t,compute_ms",
        rows.iter()
            .zip(&run.compute_times)
            .map(|(r, d)| vec![r.t, d.as_secs_f64() * 1e3]),
    )?;

    let summary = run.summary(scenario);
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, text + "\n").map_err(io_at(&path))?;
    Ok(summary)
}

/// Runs a scenario (bundled name or file path) with the scripted operator and
/// writes the log, summary and plot series into `out_dir`.
pub fn cmd_run(scenario: &str, out_dir: &Path, overrides: &[String]) -> Result<RunReport, CliError> {
    let scn = Scenario::load(scenario, overrides)?;
    let run = run_scenario(&scn, CommandMode::Scripted)?;
    let summary = write_outputs(out_dir, &scn, &run)?;
    Ok(RunReport::new(&summary, out_dir.join(LOG_FILE)))
}

pub fn cmd_verify(suite: Suite, seed: u64, count: Option<usize>) -> SuiteReport {
    run_suite(suite, seed, count.unwrap_or(suite.default_count()))
}

/// Loads the scenario and binds the port, so that a bad scenario or a busy
/// port fails before anything is served.
pub async fn prepare_serve(
    scenario: &str,
    addr: SocketAddr,
) -> Result<(tokio::net::TcpListener, SocketAddr, Scenario), CliError> {
    let scn = Scenario::load(scenario, &[])?;
    let (listener, local) = acc_teleop::bind(addr)
        .await
        .map_err(|source| CliError::Bind { addr, source })?;
    Ok((listener, local, scn))
}

pub async fn cmd_serve(scenario: &str, addr: SocketAddr) -> Result<(), CliError> {
    let (listener, local, scn) = prepare_serve(scenario, addr).await?;
    tracing::info!(%local, scenario = %scn.name, "serving");
    eprintln!("listening on http://{local} (session: ws://{local}/session)");
    acc_teleop::serve(listener, scn).await.map_err(CliError::Serve)
}
