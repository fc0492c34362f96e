//! End-to-end tests through the compiled binary: run, resume, status,
//! questionnaire measurement, and every analyze report, all in fixture
//! mode inside temporary directories.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dilemma-lab"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("binary spawns");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).expect("stdout is UTF-8")
}

fn run_err(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary spawns");
    assert!(
        !output.status.success(),
        "command unexpectedly succeeded\nstdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
    output
}

const INFORMED_CONFIG: &str = r#"
[run]
master_seed = 42
trials = 2
rounds = 10
fixture_mode = true
parallelism = 2

[[models]]
name = "cooperator"
backend = "scripted"
script = ["Cooperate"]

[experiments]
modes = ["informed"]

[profiles.pinned.cooperator]
o = 4.0
c = 4.0
e = 3.5
a = 4.5
n = 2.0
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_status_and_reports_round_trip() {
    let workspace = tempfile::tempdir().unwrap();
    let config = write_config(workspace.path(), INFORMED_CONFIG);
    let out = workspace.path().join("runs/demo");

    let stdout = run_ok(
        bin()
            .args(["run"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );
    assert!(stdout.contains("executed:  10"), "stdout: {stdout}");
    assert!(stdout.contains("remaining: 0"), "stdout: {stdout}");

    let stdout = run_ok(bin().args(["status", "--run"]).arg(&out));
    assert!(stdout.contains("2/2"), "stdout: {stdout}");
    assert!(stdout.contains("info-cooperator-TFT"), "stdout: {stdout}");

    run_ok(
        bin()
            .args(["analyze", "--report", "coop", "--run"])
            .arg(&out),
    );
    let coop = fs::read_to_string(out.join("reports/coop.csv")).unwrap();
    let lines: Vec<&str> = coop.lines().collect();
    assert_eq!(lines.len(), 6, "header plus five conditions:\n{coop}");
    assert!(lines[0].contains("cooperation_rate"));
    let tft = lines.iter().find(|l| l.contains("TFT")).unwrap();
    assert!(
        tft.contains(",1,") || tft.ends_with(",1") || tft.contains("1.0"),
        "row: {tft}"
    );

    run_ok(
        bin()
            .args(["analyze", "--report", "payoff", "--run"])
            .arg(&out),
    );
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("reports/payoff.meta.json")).unwrap())
            .unwrap();
    assert_eq!(
        meta["normalization"],
        "avg_cumulative_payoff / (rounds * T)"
    );
    assert_eq!(meta["t"], 5);
    let payoff = fs::read_to_string(out.join("reports/payoff.csv")).unwrap();
    let alld = payoff.lines().find(|l| l.contains("ALLD")).unwrap();
    assert!(alld.contains(",0,") || alld.ends_with(",0"), "row: {alld}");

    run_ok(
        bin()
            .args(["analyze", "--report", "diff", "--run"])
            .arg(&out),
    );
    let diff = fs::read_to_string(out.join("reports/diff.csv")).unwrap();
    assert_eq!(
        diff.lines().count(),
        1,
        "no manipulated conditions, so the table is only its header"
    );
}

#[test]
fn interrupted_run_resumes_to_identical_bytes() {
    let workspace = tempfile::tempdir().unwrap();
    let config = write_config(workspace.path(), INFORMED_CONFIG);
    let interrupted = workspace.path().join("runs/interrupted");
    let straight = workspace.path().join("runs/straight");

    let stdout = run_ok(
        bin()
            .args(["run", "--limit", "4"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&interrupted),
    );
    assert!(stdout.contains("executed:  4"), "stdout: {stdout}");
    assert!(stdout.contains("remaining: 6"), "stdout: {stdout}");

    let stdout = run_ok(
        bin()
            .args(["resume"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&interrupted),
    );
    assert!(stdout.contains("executed:  6"), "stdout: {stdout}");
    assert!(stdout.contains("skipped:   4"), "stdout: {stdout}");

    run_ok(
        bin()
            .args(["run"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&straight),
    );

    let transcripts = interrupted.join("transcripts");
    let mut compared = 0;
    for entry in fs::read_dir(&transcripts).unwrap() {
        let name = entry.unwrap().file_name();
        let a = fs::read(transcripts.join(&name)).unwrap();
        let b = fs::read(straight.join("transcripts").join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs between resumed and straight runs");
        compared += 1;
    }
    assert_eq!(compared, 5, "one transcript per opponent");
}

#[test]
fn resume_refuses_a_directory_without_a_manifest() {
    let workspace = tempfile::tempdir().unwrap();
    let config = write_config(workspace.path(), INFORMED_CONFIG);
    let out = workspace.path().join("runs/never-started");

    let output = run_err(
        bin()
            .args(["resume"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("no manifest"), "stderr: {stderr}");
}

const PERSONA_CONFIG: &str = r#"
[run]
master_seed = 9
trials = 2
rounds = 5
fixture_mode = true
parallelism = 2

[[models]]
name = "persona"
backend = "persona"

[experiments]
modes = ["baseline"]

[profiles.pinned.persona]
o = 4.7
c = 4.1
e = 3.1
a = 4.3
n = 2.0
"#;

#[test]
fn questionnaire_measurement_feeds_the_radar_report() {
    let workspace = tempfile::tempdir().unwrap();
    let config = write_config(workspace.path(), PERSONA_CONFIG);
    let out = workspace.path().join("runs/persona");

    run_ok(
        bin()
            .args(["run"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );

    let stdout = run_ok(
        bin()
            .args(["measure-bfi", "--runs", "5"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );
    assert!(stdout.contains("persona (5 runs)"), "stdout: {stdout}");
    assert!(out.join("bfi/persona.csv").exists());

    run_ok(
        bin()
            .args(["analyze", "--report", "radar", "--svg", "--run"])
            .arg(&out),
    );
    let radar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("reports/radar.json")).unwrap()).unwrap();
    assert_eq!(radar["axes"][0], "O");
    assert_eq!(radar["scale_max"], 5.0);
    let series = radar["series"].as_array().unwrap();
    assert_eq!(series.len(), 2);
    assert_eq!(series[0]["name"], "persona");
    assert_eq!(series.last().unwrap()["name"], "Human");

    let svg = fs::read_to_string(out.join("reports/radar.svg")).unwrap();
    assert!(
        svg.starts_with("<svg"),
        "svg starts: {}",
        &svg[..svg.len().min(60)]
    );
    assert_eq!(svg.matches("class=\"series\"").count(), 2);

    // The persona answers the questionnaire by rounding its profile, so
    // the measured means are the rounded pinned scores.
    let stored = fs::read_to_string(out.join("bfi/persona.csv")).unwrap();
    let first_row = stored.lines().nth(1).unwrap();
    assert!(
        first_row.contains("5"),
        "rounded O=4.7 must measure as 5: {first_row}"
    );
}

#[test]
fn analyzing_an_incomplete_run_fails_loudly() {
    let workspace = tempfile::tempdir().unwrap();
    let config = write_config(workspace.path(), INFORMED_CONFIG);
    let out = workspace.path().join("runs/partial");

    run_ok(
        bin()
            .args(["run", "--limit", "3"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );
    let output = run_err(
        bin()
            .args(["analyze", "--report", "coop", "--run"])
            .arg(&out),
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("holds no match records"),
        "stderr: {stderr}"
    );
}

#[test]
fn a_changed_config_cannot_write_into_an_existing_run() {
    let workspace = tempfile::tempdir().unwrap();
    let config = write_config(workspace.path(), INFORMED_CONFIG);
    let out = workspace.path().join("runs/pinned");

    run_ok(
        bin()
            .args(["run", "--limit", "2"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );

    let drifted = INFORMED_CONFIG.replace("trials = 2", "trials = 3");
    fs::write(&config, drifted).unwrap();
    let output = run_err(
        bin()
            .args(["run"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("config"), "stderr: {stderr}");
}

#[test]
fn replay_backend_serves_moves_from_a_recorded_file() {
    let workspace = tempfile::tempdir().unwrap();
    let replies = serde_json::json!({
        "base-replayed-ALLC/t0/r1/a1": "I will cooperate.",
        "base-replayed-ALLC/t0/r2/a1": "Defect",
    });
    fs::write(
        workspace.path().join("replies.json"),
        serde_json::to_string_pretty(&replies).unwrap(),
    )
    .unwrap();
    let config_text = r#"
[run]
master_seed = 1
trials = 1
rounds = 2
fixture_mode = true
parallelism = 1

[[models]]
name = "replayed"
backend = "replay"
replay_file = "replies.json"

[experiments]
modes = ["baseline"]
opponents = ["ALLC"]
"#;
    let config = write_config(workspace.path(), config_text);
    let out = workspace.path().join("runs/replayed");

    let stdout = run_ok(
        bin()
            .args(["run"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );
    assert!(stdout.contains("executed:  1"), "stdout: {stdout}");

    let transcript = fs::read_to_string(out.join("transcripts/base-replayed-ALLC.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(transcript.trim()).unwrap();
    assert_eq!(record["per_round_raw_replies"][0], "I will cooperate.");
    assert_eq!(record["rounds"][0]["self_action"], "Cooperate");
    assert_eq!(record["rounds"][1]["self_action"], "Defect");
}

#[test]
fn malformed_questionnaire_scripts_fail_measurement() {
    let workspace = tempfile::tempdir().unwrap();
    let config_text = r#"
[run]
master_seed = 1
fixture_mode = true

[[models]]
name = "mute"
backend = "scripted"
script = ["I cannot fill out forms."]
"#;
    let config = write_config(workspace.path(), config_text);
    let out = workspace.path().join("runs/mute");

    let output = run_err(
        bin()
            .args(["measure-bfi", "--runs", "2"])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out),
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("measuring mute"), "stderr: {stderr}");
    assert!(stderr.contains("malformed"), "stderr: {stderr}");
}

#[test]
fn status_of_an_unknown_run_fails() {
    let output = run_err(bin().args(["status", "--run", "no-such-run-anywhere"]));
    assert!(!output.stderr.is_empty());
}
