use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sea(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sea"))
        .args(args)
        .current_dir(dir)
        .env("SEA_THREADS", "1")
        .output()
        .unwrap()
}

fn json_lines(bytes: &[u8]) -> Vec<Value> {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{e}: {l}")))
        .collect()
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

const SBM: &str = r#"{"num_graphs":4,"nodes_per_block":4,"p_intra":0.6,"p_inter":0.1,"seed":2}"#;

fn write_config(dir: &Path) {
    std::fs::write(dir.join("sbm.json"), SBM).unwrap();
    let cfg = r#"{
        "variant": "sea_khop", "khop": 2, "num_experts": 2, "task": "node_classification",
        "node_input": {"tokens": 3}, "hidden_dim": 8, "num_heads": 2, "lpe_dim": 3,
        "train_data": {"jsonl": "data.jsonl"},
        "val_data": {"sbm": {"num_graphs": 2, "nodes_per_block": 4, "p_intra": 0.6, "p_inter": 0.1, "seed": 5}},
        "test_data": {"jsonl": "data.jsonl"},
        "max_epochs": 2, "eval_every": 1, "batch_size": 2,
        "checkpoint": "model.json", "log": "log.jsonl"
    }"#;
    std::fs::write(dir.join("train.json"), cfg).unwrap();
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d);

    let out = sea(&["gen-sbm", "--config", "sbm.json", "--out", "data.jsonl"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(d.join("data.jsonl")).unwrap().lines().count(), 4);

    let out = sea(&["train", "--config", "train.json"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = &json_lines(&out.stdout)[0];
    assert_eq!(summary["epochs"], 2);
    assert_eq!(summary["stop"], "max_epochs");
    assert_eq!(std::fs::read_to_string(d.join("log.jsonl")).unwrap().lines().count(), 2);

    let out = sea(&["eval", "--config", "train.json", "--checkpoint", "model.json"], d);
    assert!(out.status.success());
    let reports = json_lines(&out.stdout);
    let splits: Vec<&str> = reports.iter().map(|r| r["split"].as_str().unwrap()).collect();
    assert_eq!(splits, ["train", "val", "test"]);
    assert_eq!(reports[2]["value"], summary["test"]["value"]);

    let out = sea(&["report-experts", "--checkpoint", "model.json", "--data", "data.jsonl"], d);
    assert!(out.status.success());
    let report = &json_lines(&out.stdout)[0];
    let counts: u64 = report["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(counts, 32);

    let out = sea(&["diag-oversmoothing", "--checkpoint", "model.json", "--data", "data.jsonl"], d);
    assert!(out.status.success());
    assert_eq!(json_lines(&out.stdout).len(), 3);
}

#[test]
fn gradcheck_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = sea(&["gradcheck", "--module", "autodiff", "--instances", "2"], dir.path());
    assert!(out.status.success());
    let rows = json_lines(&out.stdout);
    assert!(rows.len() >= 10);
    assert!(rows.iter().all(|r| r["pass"] == true && r["module"] == "autodiff"));
}

#[test]
fn failures_are_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(error_of(&sea(&["train", "--config", "missing.json"], d))["error"], "io");
    assert_eq!(error_of(&sea(&["gradcheck", "--module", "nope"], d))["error"], "config");
    assert_eq!(error_of(&sea(&["train"], d))["error"], "usage");
    std::fs::write(d.join("bad.json"), r#"{"num_graphs":1,"nodes_per_block":3,"p_intra":0.1,"p_inter":0.5}"#).unwrap();
    assert_eq!(error_of(&sea(&["gen-sbm", "--config", "bad.json", "--out", "x.jsonl"], d))["error"], "config");
    std::fs::write(d.join("junk.jsonl"), "{not json}\n").unwrap();
    std::fs::write(d.join("m.json"), "{}").unwrap();
    assert_eq!(
        error_of(&sea(&["report-experts", "--checkpoint", "m.json", "--data", "junk.jsonl"], d))["error"],
        "json"
    );

    let out = Command::new(env!("CARGO_BIN_EXE_sea"))
        .args(["gradcheck", "--module", "autodiff", "--instances", "1"])
        .env("SEA_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(error_of(&out)["error"], "config");
}
