use std::net::SocketAddr;
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use acc_cli::{cmd_run, prepare_serve, CliError, DEFAULT_PORT, LOG_FILE, SUMMARY_FILE, VELOCITY_FILE};
use acc_sim::{Outcome, RunSummary};
use tokio::io::{AsyncReadExt, AsyncWriteExt};

fn acc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_acc"))
}

fn column(dir: &Path, file: &str, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(dir.join(file)).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn paper_scenario_stops_near_sixty_five_metres() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_run("paper-fig4", dir.path(), &[]).unwrap();
    assert_eq!(report.outcome, Outcome::Standstill);
    assert!((report.stop_x.unwrap() - 65.0).abs() <= 8.0);
    assert!(report.min_clearance.unwrap() > 0.0);
    assert_eq!(report.log_path, dir.path().join(LOG_FILE));
    for f in ["log.csv", "summary.json", "timing.csv", "velocity.csv", "steering.csv", "xy.csv", "obstacles.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn empty_road_completes_without_override() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_run("empty-road", dir.path(), &[]).unwrap();
    assert_eq!(report.outcome, Outcome::Completed);
    assert_eq!(report.min_clearance, None);
    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary.override_ticks, 0);
}

#[test]
fn denser_tree_changes_safe_progress_by_under_five_percent() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let base = cmd_run("paper-fig4", a.path(), &[]).unwrap();
    let set = vec!["controller.M=31".to_string()];
    let dense = cmd_run("paper-fig4", b.path(), &set).unwrap();
    assert_eq!(base.outcome, dense.outcome);
    let (sa, sb) = (column(a.path(), VELOCITY_FILE, "s_safe"), column(b.path(), VELOCITY_FILE, "s_safe"));
    let n = sa.len().min(sb.len());
    assert!(n > 100);
    let diff: f64 = (0..n).map(|i| (sa[i] - sb[i]).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = sa[..n].iter().map(|s| s * s).sum::<f64>().sqrt();
    assert!(diff / norm < 0.05, "relative difference {}", diff / norm);

    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(b.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary.overrides, set);
}

#[test]
fn bad_scenario_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_run("no-such-scenario", dir.path(), &[]), Err(CliError::Scenario(_))));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema_version = 1\nname = \"x\"\nduration = 1.0\n[controller]\nN = 3\n").unwrap();
    let out = acc().args(["run", bad.to_str().unwrap(), "--out"]).arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn binary_run_and_verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = acc().args(["run", "empty-road", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["outcome"], "completed");

    let out = acc().args(["verify", "qp", "--count", "5", "--seed", "7"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("qp: 5/5 passed"));

    let out = acc().args(["verify", "bogus"]).output().unwrap();
    assert!(!out.status.success());
}

async fn health(addr: SocketAddr) -> serde_json::Value {
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!("GET /health HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    serde_json::from_str(buf.split("\r\n\r\n").nth(1).unwrap()).unwrap()
}

#[tokio::test]
async fn serve_reports_twenty_hertz() {
    assert_eq!(DEFAULT_PORT, 8765);
    let (listener, addr, scn) = prepare_serve("paper-fig4", "127.0.0.1:0".parse().unwrap()).await.unwrap();
    tokio::spawn(acc_teleop::serve(listener, scn));
    let h = health(addr).await;
    assert_eq!(h["tick_rate_hz"], 20.0);
    assert_eq!(h["scenario"], "paper-fig4");
}

#[tokio::test]
async fn serve_fails_fast_on_bad_input() {
    let err = prepare_serve("no-such-scenario", "127.0.0.1:0".parse().unwrap()).await.err().unwrap();
    assert!(matches!(err, CliError::Scenario(_)));

    let taken = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = taken.local_addr().unwrap();
    let err = prepare_serve("empty-road", addr).await.err().unwrap();
    assert!(matches!(err, CliError::Bind { .. }));
}

#[tokio::test]
async fn concurrent_serves_are_independent() {
    let (la, a, sa) = prepare_serve("paper-fig4", "127.0.0.1:0".parse().unwrap()).await.unwrap();
    let (lb, b, sb) = prepare_serve("empty-road", "127.0.0.1:0".parse().unwrap()).await.unwrap();
    tokio::spawn(acc_teleop::serve(la, sa));
    tokio::spawn(acc_teleop::serve(lb, sb));
    let (ha, hb) = (health(a).await, health(b).await);
    assert_eq!((ha["scenario"].as_str(), hb["scenario"].as_str()), (Some("paper-fig4"), Some("empty-road")));
    assert_eq!((ha["sessions"].as_u64(), hb["sessions"].as_u64()), (Some(0), Some(0)));
}

#[test]
fn serve_binary_exits_on_busy_port() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let mut child = acc()
        .args(["serve", "empty-road", "--port", &port])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(std::time::Instant::now() < deadline, "serve did not exit");
        std::thread::sleep(Duration::from_millis(20));
    };
    assert!(!status.success());
}
