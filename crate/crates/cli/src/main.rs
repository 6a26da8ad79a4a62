use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use acc_cli::{cmd_run, cmd_serve, cmd_verify, DEFAULT_PORT};
use acc_oracle::{Suite, DEFAULT_SEED};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Steering-aware adaptive cruise control: simulation, verification and
/// live teleoperation.
#[derive(Parser)]
#[command(name = "acc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario with the scripted operator and write log and plot data.
    Run {
        /// Bundled scenario name or path to a scenario file.
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override a scenario key, e.g. `controller.M=31`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Serve the scenario to a remote operator over WebSocket.
    Serve {
        scenario: String,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value_t = Ipv4Addr::LOCALHOST)]
        host: Ipv4Addr,
    },
    /// Run a randomized oracle suite.
    Verify {
        /// One of `tree`, `qp`, `closed-loop`.
        suite: Suite,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        count: Option<usize>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Run { scenario, out, set } => match cmd_run(&scenario, &out, &set) {
            Ok(report) => {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Command::Serve { scenario, port, host } => {
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            match rt.block_on(cmd_serve(&scenario, SocketAddr::from((host, port)))) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Verify { suite, seed, count } => {
            let report = cmd_verify(suite, seed, count);
            for case in report.failures() {
                eprintln!("FAIL case {} (seed {:#x}): {}", case.index, case.seed, case.detail);
            }
            println!(
                "{}: {}/{} passed (seed {:#x}, {} draws excluded)",
                suite,
                report.passed(),
                report.cases.len(),
                seed,
                report.excluded
            );
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
