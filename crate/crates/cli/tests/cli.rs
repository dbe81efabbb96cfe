use std::path::Path;
use std::process::{Command, Output};

const QUICK: &[&str] = &["--trials", "16", "--sequence-length", "256", "--integration-trials", "2"];

fn dmaq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmaq"))
        .args(args)
        .env_remove("DMAQ_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = dmaq(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = dmaq(&["sdn-table", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_value_exits_one_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[monte_carlo]\ntrials = 0\n").unwrap();
    let out = dmaq(&["sdn-table", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("monte_carlo.trials"));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[signal]\nfrequency = 1000\n").unwrap();
    let out = dmaq(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_file_exits_one() {
    let out = dmaq(&["sdn-table", "--config", "/nonexistent/dmaq.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sdn_table_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("t1");
    let mut args = vec!["sdn-table", "--bits", "16", "--seed", "42", "--out", out_dir.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    let out = dmaq(&args);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("seed: 42"));
    assert!(stdout.contains("[PASS]") || stdout.contains("[FAIL]"));
    let csv = read(&out_dir, "sdn_table.csv");
    assert!(csv.starts_with("pattern,null_deg,sdn_sim_db,sdn_pred_db,delta_db\n"));
    assert_eq!(csv.lines().count(), 5);
    let summary = read(&out_dir, "sdn-table_summary.toml");
    assert!(summary.contains("seed = 42"));
    assert!(summary.contains("sdn_table.csv"));
    assert!(summary.contains("[config"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[monte_carlo]\nseed = 5\n[design]\npatterns = [\"cardioid\"]\n").unwrap();
    let out_dir = dir.path().join("o");
    let mut args = vec!["sdn-table", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out_dir.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    let out = dmaq(&args);
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed: 9"));
    let csv = read(&out_dir, "sdn_table.csv");
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("cardioid,"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("from_env");
    let mut args = vec!["null-sweep", "--nulls", "30,180"];
    args.extend_from_slice(QUICK);
    let out = Command::new(env!("CARGO_BIN_EXE_dmaq"))
        .args(&args)
        .env("DMAQ_OUTPUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.code().is_some());
    let csv = read(&out_dir, "null_sweep.csv");
    assert!(csv.starts_with("null_deg,sdn_max_norm_db,sdn_look_norm_db,sdn_pred_db,status\n"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let outputs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out_dir = dir.path().join(name);
            let mut args = vec!["freq-sweep", "--bits", "10,16", "--seed", "3", "--out", out_dir.to_str().unwrap()];
            args.extend_from_slice(QUICK);
            dmaq(&args);
            std::fs::read(out_dir.join("freq_sweep.csv")).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn validate_reports_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("v");
    let mut args = vec!["validate", "--patterns", "dipole", "--out", out_dir.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    let out = dmaq(&args);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS] decomposition identity"));
    assert!(stdout.contains("quantizer error bound"));
    assert!(out_dir.join("validate_summary.toml").exists());
}

#[test]
fn sdn_table_rejects_bit_list() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sdn-table", "--bits", "10,12", "--out", dir.path().to_str().unwrap()];
    args.extend_from_slice(QUICK);
    let out = dmaq(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantizer.bits"));
}
