use std::fs;
use std::path::Path;
use std::process::Command;

use twotemp::cli::run_cli;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twotemp"))
}

fn run(args: &[&str], out: &Path) -> i32 {
    let mut argv = vec!["twotemp"];
    argv.extend_from_slice(args);
    argv.extend_from_slice(&["--out", out.to_str().unwrap()]);
    run_cli(argv)
}

#[test]
fn ode_check_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["ode-check"], dir.path()), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ode_check.json")).unwrap()).unwrap();
    assert_eq!(report["experiment"], "ode_check");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 16);
    let csv = fs::read_to_string(dir.path().join("ode_check.csv")).unwrap();
    assert!(csv.starts_with("dt,"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = bin()
        .args(["ode-check", "--config", missing.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn unknown_key_and_bad_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"sigma": 1.0, "sigmaa": 2.0}"#).unwrap();
    assert_eq!(run(&["ode-check", "--config", cfg.to_str().unwrap()], dir.path()), 2);
    fs::write(&cfg, r#"{"dt": -1.0}"#).unwrap();
    assert_eq!(run(&["ode-check", "--config", cfg.to_str().unwrap()], dir.path()), 2);
}

#[test]
fn infeasible_epsilon_list_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epsilon_sweep": {"epsilons": [0.25, 0.5]}}"#).unwrap();
    assert_eq!(run(&["sweep-epsilon", "--config", cfg.to_str().unwrap()], dir.path()), 2);
    assert!(!dir.path().join("epsilon_sweep.json").exists());
}

#[test]
fn print_defaults_round_trips() {
    let out = bin().arg("--print-defaults").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = twotemp::harness::ExperimentConfig::from_json(&text).unwrap();
    assert_eq!(cfg, twotemp::harness::ExperimentConfig::default());
}

#[test]
fn missing_subcommand_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&[], dir.path()), 2);
}

#[test]
fn seed_override_changes_geometry() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(&["validate-geometry", "--seed", "1"], a.path()), 0);
    assert_eq!(run(&["validate-geometry", "--seed", "2"], b.path()), 0);
    let ga = fs::read_to_string(a.path().join("geometry.json")).unwrap();
    let gb = fs::read_to_string(b.path().join("geometry.json")).unwrap();
    assert_ne!(ga, gb);
}

#[test]
fn correctors_table_columns() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["correctors"], dir.path()), 0);
    let table = fs::read_to_string(dir.path().join("correctors_table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "epsilon,r_eps,l2_sq,h1_semi_sq,capacity_error_const_case");
    assert_eq!(lines.count(), 3);
}
