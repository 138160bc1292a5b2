//! End-to-end checks of the command-line surface: verbs, exit codes, and the
//! files each verb leaves behind.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pmipsim"))
}

fn fig8_path() -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/paper_fig8.toml")).to_path_buf()
}

/// A fast two-cell scenario with a single CBR flow, for sweep tests.
const SWEEP_SCENARIO: &str = r#"
[run]
duration_s = 16.0
seed = 3

[protocol]
variant = "pmipv6"
aaa_delay_ms = 2.0

[mih]
hints = [{ ap = "ap2", channel = 6 }]

[topology]
links = [
    { a = "cn", b = "lma", delay_ms = 10.0 },
    { a = "lma", b = "mag1", delay_ms = 1.0 },
    { a = "lma", b = "mag2", delay_ms = 1.0 },
    { a = "mag1", b = "ap1", delay_ms = 0.5 },
    { a = "mag2", b = "ap2", delay_ms = 0.5 },
]

[[topology.cells]]
ap = "ap1"
mag = "mag1"
center_m = 0.0
radius_m = 150.0
lgd_m = 129.8
ld_m = 130.0
wireless_delay_ms = 2.0

[[topology.cells]]
ap = "ap2"
mag = "mag2"
center_m = 300.0
radius_m = 2800.0
lgd_m = 2700.0
ld_m = 2750.0
wireless_delay_ms = 2.0

[mobility]
start_m = 0.0
speed_mps = 20.0
speeds_mps = [10.0, 20.0]

[[flows.cbr]]
name = "cbr0"
packet_bytes = 1000
interval_ms = 1.0
start_s = 1.5
stop_s = 14.0
"#;

#[test]
fn validate_accepts_the_shipped_scenario() {
    let out = bin()
        .args(["validate", "--scenario"])
        .arg(fig8_path())
        .output()
        .expect("spawn");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("scenario OK"));
}

#[test]
fn validate_rejects_broken_scenarios_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    // Inverted thresholds in the first cell.
    let broken = SWEEP_SCENARIO.replace("lgd_m = 129.8", "lgd_m = 140.0");
    std::fs::write(&path, broken).unwrap();
    let out = bin().args(["validate", "--scenario"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lgd_m < ld_m"), "stderr: {stderr}");
}

#[test]
fn run_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    std::fs::write(&scenario, SWEEP_SCENARIO).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .args(["--variant", "pmipv6_mih", "--seed", "9", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["events.log", "flows.csv", "handover_records.csv", "throughput.csv", "budget.txt"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let budget = std::fs::read_to_string(out_dir.join("budget.txt")).unwrap();
    assert!(budget.contains("pmipv6_mih"));
    // Closed-form rows sum to the printed total.
    let mut sum = 0u64;
    let mut total = None;
    for line in budget.lines().skip(2) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() >= 2 {
            if cols[0] == "total" {
                total = cols[1].parse::<u64>().ok();
                break;
            }
            if let Ok(v) = cols[1].parse::<u64>() {
                sum += v;
            }
        }
    }
    assert_eq!(Some(sum), total, "budget rows must sum to the total");

    let handovers = std::fs::read_to_string(out_dir.join("handover_records.csv")).unwrap();
    assert!(handovers.lines().count() >= 2, "one record expected:\n{handovers}");
    // The printed headline latency re-derives from the emitted CSV.
    let stdout = String::from_utf8_lossy(&out.stdout);
    let printed_ms: f64 = stdout
        .lines()
        .find(|l| l.starts_with("handover latency:"))
        .and_then(|l| l.split_whitespace().nth(2))
        .and_then(|v| v.parse().ok())
        .expect("latency line printed");
    let csv_latency_us: u64 = handovers
        .lines()
        .nth(1)
        .and_then(|l| l.split(',').nth(5))
        .and_then(|v| v.parse().ok())
        .expect("latency column");
    assert_eq!((printed_ms * 1000.0).round() as u64, csv_latency_us);

    let events = std::fs::read_to_string(out_dir.join("events.log")).unwrap();
    let first = events.lines().next().unwrap();
    // Line format: time_us seq target payload_kind detail
    let cols: Vec<&str> = first.split(' ').collect();
    assert!(cols.len() >= 4);
    assert!(cols[0].parse::<u64>().is_ok());
    assert!(cols[1].parse::<u64>().is_ok());
}

#[test]
fn run_emits_paper_format_loss_report_for_video() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["run", "--scenario"])
        .arg(fig8_path())
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let loss = std::fs::read_to_string(out_dir.join("loss_report.txt")).unwrap();
    let lines: Vec<&str> = loss.lines().collect();
    assert!(lines[0].starts_with("Packet sent:p->nA:"));
    assert!(lines[1].starts_with(" Packet lost:p->lA:"));
    assert_eq!(lines[2], "");
    assert!(lines[3].starts_with("Frame sent:f->nA:"));
    assert!(lines[4].starts_with(" Frame lost:f->lA:"));
    assert!(out_dir.join("psnr.csv").exists());
}

#[test]
fn sweep_runs_both_variants_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    std::fs::write(&scenario, SWEEP_SCENARIO).unwrap();

    let sweep_once = |out_name: &str| -> String {
        let out_dir = dir.path().join(out_name);
        let out = bin()
            .args(["sweep", "--scenario"])
            .arg(&scenario)
            .args(["--sweep", "mobility.speed_mps=10,20", "--out"])
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(out_dir.join("sweep_summary.csv")).unwrap()
    };
    let summary = sweep_once("a");

    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "param_value,variant,latency_ms,loss,mean_throughput_mbps"
    );
    assert_eq!(lines.len(), 1 + 4, "one row per value per variant");
    // Per swept value, the assisted variant's latency is below the baseline's.
    for value in ["10", "20"] {
        let lat = |variant: &str| -> f64 {
            lines
                .iter()
                .find(|l| l.starts_with(&format!("{value},{variant},")))
                .and_then(|l| l.split(',').nth(2))
                .and_then(|v| v.parse().ok())
                .unwrap()
        };
        assert!(
            lat("pmipv6_mih") < lat("pmipv6"),
            "assisted latency must be below baseline at {value} m/s"
        );
    }

    // Same seed, repeated invocation: byte-identical summary.
    let again = sweep_once("b");
    assert_eq!(summary, again);
}

#[test]
fn budget_verb_needs_no_simulation() {
    let out = bin()
        .args(["budget", "--scenario"])
        .arg(fig8_path())
        .args(["--variant", "all"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pmipv6: total 72500 us"), "stdout: {stdout}");
    assert!(stdout.contains("pmipv6_mih: total 12500 us"), "stdout: {stdout}");
    assert!(stdout.contains("initial_entry: total 1017000 us"), "stdout: {stdout}");
}

#[test]
fn unknown_sweep_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    std::fs::write(&scenario, SWEEP_SCENARIO).unwrap();
    let out = bin()
        .args(["sweep", "--scenario"])
        .arg(&scenario)
        .args(["--sweep", "no.such.key=1,2"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no.such.key"));
}
