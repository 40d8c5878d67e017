use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forecast-eval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--n", "300", "--markets-per-event", "3", "--out-dir", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = cli(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_validate_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &[]);
    let data = tmp.path().to_str().unwrap();

    let o = cli(&["validate", "--data-dir", data]);
    assert!(o.status.success());

    let csv = tmp.path().join("board.csv");
    let json = tmp.path().join("board.json");
    let o = cli(&[
        "evaluate",
        "--data-dir",
        data,
        "--bootstrap",
        "200",
        "--out-csv",
        csv.to_str().unwrap(),
        "--out-json",
        json.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("calibrated"));
    assert!(stdout(&o).contains("market-baseline"));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().next().unwrap().contains("brier_ci_halfwidth"));
    assert_eq!(text.lines().count(), 3);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);

    // same seed, same bytes
    let again = cli(&["evaluate", "--data-dir", data, "--bootstrap", "200", "--format", "csv"]);
    let twice = cli(&["evaluate", "--data-dir", data, "--bootstrap", "200", "--format", "csv"]);
    assert_eq!(again.stdout, twice.stdout);
}

#[test]
fn missing_outcomes_is_io_error_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &[]);
    fs::remove_file(tmp.path().join("outcomes.jsonl")).unwrap();
    let out = tmp.path().join("board.csv");
    let o = cli(&["evaluate", "--data-dir", tmp.path().to_str().unwrap(), "--out-csv", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("outcomes.jsonl"));
}

#[test]
fn invalid_forecast_is_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &[]);
    let path = tmp.path().join("forecasts.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    first["p_yes"] = serde_json::json!(1.5);
    let rest: Vec<&str> = text.lines().skip(1).collect();
    fs::write(&path, format!("{first}\n{}\n", rest.join("\n"))).unwrap();
    let o = cli(&["validate", "--data-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schedule_halves_the_gap() {
    let o = cli(&["schedule", "--t0", "2025-01-01T00:00:00Z", "--tau", "2025-01-01T08:00:00Z"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("2025-01-01T04:00:00"), "{out}");
    assert!(!out.contains("2025-01-01T06:00:00"), "{out}");

    let o = cli(&["schedule", "--t0", "2025-01-01T00:00:00Z", "--tau", "2025-01-01T00:30:00Z"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn horizon_consistency_and_returns() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &["--lead-hours", "1,6,24,72"]);
    let data = tmp.path().to_str().unwrap();

    let o = cli(&["horizon-bins", "--data-dir", data, "--no-baseline"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().count() >= 4);

    let o = cli(&["consistency", "--data-dir", data]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let payoffs = tmp.path().join("payoffs.csv");
    let o = cli(&["returns", "--data-dir", data, "--gamma", "0.5", "--payoffs-out", payoffs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&payoffs).unwrap().lines().count() > 1);
}

#[test]
fn verify_theory_passes_for_calibrated() {
    let o = cli(&["verify-theory", "--n", "20000", "--grid-step", "1e-3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("[PASS]") && !out.contains("[FAIL]"), "{out}");
}

#[test]
fn bad_argument_exits_2() {
    let o = cli(&["evaluate", "--data-dir", "/nonexistent", "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}
