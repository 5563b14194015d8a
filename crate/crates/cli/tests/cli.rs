use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridstorm"))
}

fn example_grid() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/example_grid.json")
}

fn storm(dir: &Path) -> PathBuf {
    let path = dir.join("storm.json");
    std::fs::write(
        &path,
        r#"{"center_path": [[-11, 4], [8, 4]], "severity": 1.0, "diameter": 12.0, "seed": 3}"#,
    )
    .unwrap();
    path
}

fn run(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn validate_reports_example_grid() {
    let text = run(bin().arg("validate").arg("--grid").arg(example_grid()));
    assert!(text.contains("3 circuits, 9 segments, 65 customers"), "{text}");
}

#[test]
fn validate_rejects_missing_grid() {
    let out = bin().args(["validate", "--grid", "/nonexistent/grid.json"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/grid.json"));
}

#[test]
fn simulate_writes_episode_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let storm = storm(dir.path());
    let out = dir.path().join("out");
    run(bin()
        .args(["simulate", "--policy", "escalation", "--rho", "1.0", "--seed", "4"])
        .arg("--grid")
        .arg(example_grid())
        .arg("--storm")
        .arg(&storm)
        .arg("--out-dir")
        .arg(&out));
    let csv = std::fs::read_to_string(out.join("replications.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "replication,policy,rho,budget,outage_hours,restore_h,stop_h,unrepaired,decision_ms_mean,customers_out"
    );
    assert!(lines.next().unwrap().starts_with("0,escalation,1,0,"));
    let episode: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("episode_escalation_rep0.json")).unwrap()).unwrap();
    assert!(episode.get("events").is_some());
}

#[test]
fn frozen_scenario_round_trips_through_posterior_optimal() {
    let dir = tempfile::tempdir().unwrap();
    let storm = storm(dir.path());
    let scenario = dir.path().join("scenario.json");
    run(bin()
        .args(["simulate", "--policy", "posterior-optimal", "--seed", "4"])
        .arg("--grid")
        .arg(example_grid())
        .arg("--storm")
        .arg(&storm)
        .arg("--out-dir")
        .arg(dir.path().join("a"))
        .arg("--scenario-out")
        .arg(&scenario));
    let first = run(bin()
        .arg("posterior-optimal")
        .arg("--grid")
        .arg(example_grid())
        .arg("--scenario-in")
        .arg(&scenario));
    let again = run(bin()
        .arg("posterior-optimal")
        .arg("--grid")
        .arg(example_grid())
        .arg("--scenario-in")
        .arg(&scenario));
    assert_eq!(first, again);
}
