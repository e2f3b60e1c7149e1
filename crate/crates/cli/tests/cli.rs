use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{
  "inputs": {"synthetic": {"regions": 25}},
  "training": {"epochs": 2, "replicates": 1},
  "eval": {"lambda_grid": {"min": 0.01, "max": 1.0, "count": 3}}
}"#;

fn hugat(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hugat"));
    cmd.current_dir(dir).args(args).env_remove("HUGAT_SEED").env("RUST_LOG", "warn");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.json"), SMALL).unwrap();
    dir
}

#[test]
fn run_writes_summary_and_prints_scores() {
    let dir = setup();
    let out = hugat(dir.path(), &["--config", "small.json", "--out", "o", "run"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("R-T_C") && stdout.contains("nmi"));
    let s = summary(&dir.path().join("o"));
    assert_eq!(s["training"].as_array().unwrap().len(), 1);
    assert!(s["aggregate"]["nmi"].is_number());
    assert!(dir.path().join("o/train").is_dir());
}

#[test]
fn train_then_eval_reuses_embeddings() {
    let dir = setup();
    assert!(hugat(dir.path(), &["--config", "small.json", "--out", "o", "train"], &[]).status.success());
    assert!(summary(&dir.path().join("o"))["eval"].as_array().unwrap().is_empty());
    let out = hugat(dir.path(), &["--config", "small.json", "--out", "o", "eval"], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&dir.path().join("o"))["eval"].as_array().unwrap().len(), 1);
}

#[test]
fn eval_without_training_exits_5() {
    let dir = setup();
    let out = hugat(dir.path(), &["--config", "small.json", "--out", "o", "eval"], &[]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn config_errors_exit_2() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.json"), r#"{"epochs": 3}"#).unwrap();
    assert_eq!(hugat(dir.path(), &["--config", "bad.json", "synth"], &[]).status.code(), Some(2));
    assert_eq!(hugat(dir.path(), &["--config", "missing.json", "synth"], &[]).status.code(), Some(2));
    let out = hugat(dir.path(), &["--config", "small.json", "--out", "o", "synth"], &[("HUGAT_SEED", "abc")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_table_exits_3() {
    let dir = setup();
    assert!(hugat(dir.path(), &["--config", "small.json", "--out", "s", "synth"], &[]).status.success());
    std::fs::remove_file(dir.path().join("s/data/landuse.csv")).unwrap();
    std::fs::write(dir.path().join("paths.json"), r#"{"inputs": {"paths": {"dir": "s/data"}}}"#).unwrap();
    let out = hugat(dir.path(), &["--config", "paths.json", "--out", "o", "build-graph"], &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("landuse"));
}

#[test]
fn seed_precedence() {
    let dir = setup();
    let args = ["--config", "small.json", "--out", "o", "synth"];
    assert!(hugat(dir.path(), &args, &[("HUGAT_SEED", "5")]).status.success());
    assert_eq!(summary(&dir.path().join("o"))["root_seed"], 5);
    let with_flag = [&args[..], &["--seed", "6"]].concat();
    assert!(hugat(dir.path(), &with_flag, &[("HUGAT_SEED", "5")]).status.success());
    assert_eq!(summary(&dir.path().join("o"))["root_seed"], 6);
}
