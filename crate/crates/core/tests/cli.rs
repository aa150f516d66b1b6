//! End-to-end checks of the command line binary: exit codes, error
//! records, printed manifests, and byte-stable artifacts.

use std::path::Path;
use std::process::{Command, Output};

const GOOD_CONFIG: &str = r#"{
  "experiment": "modulus",
  "label": "strong-monotone-leaf",
  "expr": {"type": "leaf", "atom": {"type": "scaled_identity", "dim": 2, "alpha": 2.0}},
  "gamma": 0.5,
  "radius": 2.0,
  "samples": 24,
  "seed": 11,
  "output": "modulus.json"
}"#;

const NO_SEED_CONFIG: &str = r#"{
  "experiment": "modulus",
  "label": "strong-monotone-leaf",
  "expr": {"type": "leaf", "atom": {"type": "scaled_identity", "dim": 2, "alpha": 2.0}},
  "gamma": 0.5,
  "radius": 2.0,
  "samples": 24,
  "output": "modulus.json"
}"#;

const DEGENERATE_CONFIG: &str = r#"{
  "experiment": "modulus",
  "label": "degenerate-graph",
  "expr": {"type": "leaf", "atom": {"type": "normal_cone", "set": {"type": "singleton", "point": [0.0]}}},
  "gamma": 1.0,
  "radius": 1.0,
  "samples": 8,
  "seed": 1,
  "output": "degenerate.json"
}"#;

const COISOMETRIC_EXPR: &str = r#"{
  "type": "cocompose",
  "map": {"rows": 1, "cols": 2, "data": [0.7071067811865476, 0.7071067811865476]},
  "gamma": 0.5,
  "inner": {"type": "leaf", "atom": {"type": "subdiff_l1", "dim": 1, "lambda": 0.7}}
}"#;

fn run_binary(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rescomp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, content).expect("test file written");
    path.to_string_lossy().into_owned()
}

fn stderr_record(output: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&output.stderr);
    let line = text.lines().last().expect("stderr has a record");
    serde_json::from_str(line).expect("stderr record is JSON")
}

#[test]
fn run_prints_manifest_and_exits_zero() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write(dir.path(), "config.json", GOOD_CONFIG);
    let out_dir = dir.path().join("out");
    let output = run_binary(&["--out", out_dir.to_str().unwrap(), "run", &config]);
    assert_eq!(output.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("stdout is a JSON manifest");
    assert_eq!(manifest["experiments"][0]["status"], "ok");
    assert_eq!(manifest["outputs"][0], "modulus.json");
    assert!(manifest["config_hash"].is_u64());
    assert!(out_dir.join("modulus.json").is_file());
}

#[test]
fn missing_seed_exits_two_with_config_record() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write(dir.path(), "config.json", NO_SEED_CONFIG);
    let output = run_binary(&["--out", dir.path().to_str().unwrap(), "run", &config]);
    assert_eq!(output.status.code(), Some(2));
    let record = stderr_record(&output);
    assert_eq!(record["error"], "config");
    assert!(record["message"].as_str().unwrap().contains("seed"));
}

#[test]
fn degenerate_experiment_exits_three_with_experiment_record() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write(dir.path(), "config.json", DEGENERATE_CONFIG);
    let output = run_binary(&["--out", dir.path().to_str().unwrap(), "run", &config]);
    assert_eq!(output.status.code(), Some(3));
    let record = stderr_record(&output);
    assert_eq!(record["error"], "experiment");
    let manifest: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("manifest still printed");
    assert!(manifest["experiments"][0]["status"]
        .as_str()
        .unwrap()
        .starts_with("failed:"));
}

#[test]
fn describe_prints_annotated_tree() {
    let dir = tempfile::tempdir().expect("tempdir");
    let expr = write(dir.path(), "expr.json", COISOMETRIC_EXPR);
    let output = run_binary(&["describe", &expr]);
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("cocompose"));
    assert!(text.contains("coisometry collapse available"));
    assert!(text.contains("native"));
    assert!(text.contains("dim 2"));
}

#[test]
fn describe_rejects_invalid_expression() {
    let dir = tempfile::tempdir().expect("tempdir");
    let expr = write(dir.path(), "expr.json", "{\"type\": \"nonsense\"}");
    let output = run_binary(&["describe", &expr]);
    assert_eq!(output.status.code(), Some(2));
    assert_eq!(stderr_record(&output)["error"], "config");
}

#[test]
fn unknown_criterion_exits_two() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = run_binary(&["--out", dir.path().to_str().unwrap(), "repro", "99"]);
    assert_eq!(output.status.code(), Some(2));
    assert_eq!(stderr_record(&output)["error"], "config");
}

#[test]
fn repro_single_criterion_writes_result() {
    let dir = tempfile::tempdir().expect("tempdir");
    let output = run_binary(&["--out", dir.path().to_str().unwrap(), "repro", "5"]);
    assert_eq!(output.status.code(), Some(0));
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("criterion 5"));
    assert!(text.contains("1/1 criteria passed"));
    let result: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("criterion-05/result.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(result["status"], "pass");
    assert!(dir.path().join("summary.json").is_file());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write(dir.path(), "config.json", GOOD_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let first = run_binary(&["--out", out_a.to_str().unwrap(), "run", &config]);
    let second = run_binary(&["--out", out_b.to_str().unwrap(), "run", &config]);
    assert_eq!(first.status.code(), Some(0));
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    let a = std::fs::read(out_a.join("modulus.json")).unwrap();
    let b = std::fs::read(out_b.join("modulus.json")).unwrap();
    assert_eq!(a, b);
}

const GRAPH_CONFIG: &str = r#"{
  "experiment": "sample-graph",
  "label": "soft-threshold-graph",
  "expr": {"type": "leaf", "atom": {"type": "subdiff_l1", "dim": 2, "lambda": 0.7}},
  "gamma": 1.0,
  "radius": 1.5,
  "samples": 16,
  "seed": 1,
  "output": "graph.csv"
}"#;

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = write(dir.path(), "config.json", GRAPH_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let plain = run_binary(&["--out", out_a.to_str().unwrap(), "run", &config]);
    let overridden = run_binary(&[
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "9999",
        "run",
        &config,
    ]);
    assert_eq!(plain.status.code(), Some(0));
    assert_eq!(overridden.status.code(), Some(0));
    let a = std::fs::read(out_a.join("graph.csv")).unwrap();
    let b = std::fs::read(out_b.join("graph.csv")).unwrap();
    assert_ne!(a, b);
}
