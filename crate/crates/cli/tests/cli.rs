use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn fusekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusekit")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn compile_reports_metric_reduction() {
    let report = json(&fusekit(&["compile", path(&data("pattern3.json"))]));
    assert_eq!(report["command"], "compile");
    assert_eq!(report["before"]["layer_count"], 4);
    assert_eq!(report["after"]["layer_count"], 1);
    assert_eq!(report["before"]["computation_count"], 5);
    assert_eq!(report["after"]["computation_count"], 3);
    assert_eq!(report["blocks"].as_array().unwrap().len(), 1);
    assert!(report.get("timing").is_none());
}

#[test]
fn no_fuse_keeps_metrics() {
    let report = json(&fusekit(&["compile", "--no-fuse", path(&data("pattern3.json"))]));
    assert_eq!(report["fused"], false);
    assert_eq!(report["before"], report["after"]);
    assert!(report["blocks"].as_array().unwrap().is_empty());
}

#[test]
fn report_file_and_digest_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let graph = data("chain8.json");
    for out in [&a, &b] {
        let res = fusekit(&["compile", path(&graph), "--report", path(out)]);
        assert!(res.status.success());
        assert!(res.stdout.is_empty());
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    let report: Value = serde_json::from_slice(&a).unwrap();
    let digest = report["input_digest"].as_str().unwrap();
    assert!(digest.starts_with("sha256:"));
    assert_eq!(digest.len(), "sha256:".len() + 64);
}

#[test]
fn fuse_report_lists_selected_candidates() {
    let report = json(&fusekit(&["fuse-report", path(&data("fuse_add.json"))]));
    let candidates = report["fusion"]["candidates"].as_array().unwrap();
    assert!(candidates.iter().any(|c| c["selected"] == true));
    assert_eq!(report["fusion"]["after"]["layer_count"], 1);
}

#[test]
fn shape_error_names_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"nodes": [
            {"id": 0, "op": "input", "attrs": {"shape": [4, 4]}},
            {"id": 1, "op": "input", "attrs": {"shape": [3, 5]}},
            {"id": 2, "op": "add", "inputs": [0, 1]}], "outputs": [2]}"#,
    )
    .unwrap();
    let out = fusekit(&["compile", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("node 2"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_input_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"nodes\": [").unwrap();
    assert_eq!(fusekit(&["compile", path(&bad)]).status.code(), Some(1));
    assert_eq!(fusekit(&["compile", path(&dir.path().join("missing.json"))]).status.code(), Some(1));
    assert_eq!(fusekit(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn zero_runs_is_rejected() {
    let graph = data("pattern3.json");
    assert_eq!(fusekit(&["bench", path(&graph), "--runs", "0"]).status.code(), Some(1));
    assert_eq!(fusekit(&["tune", path(&graph), "--runs", "0"]).status.code(), Some(1));
}

#[test]
fn bench_reports_both_timings() {
    let report = json(&fusekit(&["bench", path(&data("pattern3.json")), "--runs", "5", "--warmup", "1"]));
    let timing = &report["timing"];
    assert_eq!(timing["unfused"]["samples_ms"].as_array().unwrap().len(), 5);
    assert_eq!(timing["fused"]["samples_ms"].as_array().unwrap().len(), 5);
    assert!(timing["speedup"].as_f64().unwrap() > 0.0);

    let only = json(&fusekit(&["bench", path(&data("pattern3.json")), "--fused", "--runs", "3"]));
    assert!(only["timing"]["unfused"].is_null());
    assert!(only["timing"]["speedup"].is_null());
}

#[test]
fn tune_assigns_every_block() {
    let report = json(&fusekit(&[
        "tune",
        path(&data("fuse_add.json")),
        "--runs",
        "3",
        "--warmup",
        "1",
        "--generations",
        "2",
        "--population",
        "4",
        "--seed",
        "7",
    ]));
    let blocks = report["blocks"].as_array().unwrap();
    let assignment = report["timing"]["assignment"].as_object().unwrap();
    assert_eq!(blocks.len(), assignment.len());
    for b in blocks {
        assert_eq!(assignment[&b["node"].to_string()], b["variant"]);
    }
    assert_eq!(report["timing"]["history_ms"].as_array().unwrap().len(), 2);
}

#[test]
fn planted_search_finds_target() {
    let dir = tempfile::tempdir().unwrap();
    let history = dir.path().join("h.jsonl");
    let report = json(&fusekit(&[
        "search",
        path(&data("search_planted.json")),
        "--history",
        path(&history),
        "--seed",
        "3",
    ]));
    assert_eq!(report["result"]["status"], "found");
    assert_eq!(report["result"]["arch"]["num_layers"], 6);
    assert_eq!(report["result"]["arch"]["hidden_size"], 384);
    assert_eq!(report["result"]["arch"]["ffn_size"], 1536);
    let lines = std::fs::read_to_string(&history).unwrap();
    assert_eq!(lines.lines().count(), report["episodes"].as_u64().unwrap() as usize);
}

#[test]
fn same_seed_gives_identical_history() {
    let dir = tempfile::tempdir().unwrap();
    let config = data("search_surrogate.json");
    let runs: Vec<Vec<u8>> = ["a.jsonl", "b.jsonl"]
        .iter()
        .map(|name| {
            let history = dir.path().join(name);
            let out = fusekit(&["search", path(&config), "--history", path(&history), "--seed", "11"]);
            assert!(out.status.success());
            std::fs::read(history).unwrap()
        })
        .collect();
    assert!(!runs[0].is_empty());
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn infeasible_budget_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: Value = serde_json::from_slice(&std::fs::read(data("search_surrogate.json")).unwrap()).unwrap();
    config["space"]["latency_budget_ms"] = 1.0.into();
    config["search"] = serde_json::json!({"updates_phase1": 2, "updates_phase2": 2});
    let file = dir.path().join("tight.json");
    std::fs::write(&file, config.to_string()).unwrap();
    let history = dir.path().join("h.jsonl");
    let out = fusekit(&["search", path(&file), "--history", path(&history)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["result"]["status"], "exhausted");
}

#[test]
fn unknown_config_key_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config: Value = serde_json::from_slice(&std::fs::read(data("search_planted.json")).unwrap()).unwrap();
    config["space"]["typo"] = 1.into();
    let file = dir.path().join("typo.json");
    std::fs::write(&file, config.to_string()).unwrap();
    let history = dir.path().join("h.jsonl");
    let out = fusekit(&["search", path(&file), "--history", path(&history)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!history.exists());
}
