use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn unicron(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unicron")).args(args).env_remove("UNICRON_SEED").output().unwrap()
}

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/small.json")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_small_config_agrees_with_oracle() {
    let cfg = small_config();
    let out = unicron(&["plan", "--config", s(&cfg), "--fault", "node:a1", "--join", "workers:4", "--oracle"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["capacity"], 12);
    let perts = v["perturbations"].as_array().unwrap();
    assert_eq!(perts.len(), 2);
    assert_eq!(perts[0]["capacity"], 8);
    assert_eq!(perts[1]["capacity"], 16);
    assert_eq!(v["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn plan_case_respects_capacity_and_minimums() {
    let out = unicron(&["plan", "--case", "5"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let total: u64 = v["plan"]["tasks"].as_array().unwrap().iter().map(|t| t["x"].as_u64().unwrap()).sum();
    assert!(total <= 128 && total > 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let csv = dir.path().join("o.csv");
    let out = unicron(&["simulate", "--trace", s(&missing), "--out", s(&csv)]);
    assert_eq!(out.status.code(), Some(1));

    let out = unicron(&["simulate", "--policy", "fastest", "--out", s(&csv)]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"nodes": {"count": 2, "gpus_per_node": 8}, "tasks": [{"id": "a", "model_size": 1e9, "weight": -1, "min_workers": 1, "d_iter": 10}]}"#).unwrap();
    let out = unicron(&["plan", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = unicron(&["trace-gen", "--out", s(&dir.path().join("t.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_rate_trace_has_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let out = unicron(&["trace-gen", "--lambda", "0", "--horizon", "3600", "--out", s(&trace)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 1, "header only: {text}");

    let csv = dir.path().join("m.csv");
    let out = unicron(&["simulate", "--trace", s(&trace), "--policy", "restart_checkpoint", "--out", s(&csv)]);
    assert!(out.status.success());
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["accumulated_waf"], summary["ideal_waf"]);
    assert_eq!(summary["replans"], 0);
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    unicron(&["trace-gen", "--preset", "trace-a", "--seed", "4", "--out", s(&a)]);
    let out = Command::new(env!("CARGO_BIN_EXE_unicron"))
        .args(["trace-gen", "--preset", "trace-a", "--out", s(&b)])
        .env("UNICRON_SEED", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn verify_transition_points_and_sweep() {
    for extra in [&["--fail-after-mb", "1"][..], &["--fail-after-reduced-segments", "1"], &[]] {
        let mut args = vec!["verify-transition", "--dp", "4", "--pp", "2", "--microbatches", "12"];
        args.extend_from_slice(extra);
        let out = unicron(&args);
        assert_eq!(out.status.code(), Some(0), "{extra:?}: {}", String::from_utf8_lossy(&out.stdout));
    }
    let out = unicron(&["verify-transition", "--sweep"]);
    assert!(out.status.success());
}

#[test]
fn calibrate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("cal.csv");
    let cfg = small_config();
    let out = unicron(&["calibrate", "--config", s(&cfg), "--synthesize", "--out", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = unicron(&["calibrate", "--config", s(&cfg), "--input", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Rows for another workload do not validate.
    let out = unicron(&["calibrate", "--case", "5", "--input", s(&csv)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn compare_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = unicron(&[
        "compare",
        "--preset",
        "trace-b",
        "--runs",
        "2",
        "--policies",
        "unicron,affected_task_only",
        "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(v.to_string().contains("affected_task_only"));
}
