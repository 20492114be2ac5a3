use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn headcache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headcache")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = headcache(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().unwrap();
    serde_json::from_str::<Value>(last).unwrap()["error"].clone()
}

const SMALL: [&str; 10] = ["--window", "16", "--top-t", "32", "--sinks", "4", "--recents", "16", "--m-top", "2"];

fn small_trace(dir: &Path) -> String {
    let path = dir.join("t.tkv").display().to_string();
    let args = ["gen", "--out", &path, "--layers", "2", "--heads", "8", "--seq-len", "128", "--head-dim", "16"];
    let summary = ok_json(&args);
    assert_eq!(summary["bytes"], 24 + 2 * 8 * 3 * 128 * 16 * 4);
    assert_eq!(summary["planted_heads"][0].as_array().unwrap().len(), 2);
    path
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(&SMALL);
    v.extend_from_slice(&["--beta", "0.375"]);
    v
}

#[test]
fn compress_writes_plans_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_trace(dir.path());
    let plans = ok_json(&with_small(&["compress", "--trace", &trace, "--policy", "task-kv,streaming", "--budget", "0.5"]));
    let runs = plans["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for run in runs {
        for plan in run["plans"].as_array().unwrap() {
            let used: usize = plan["per_head_retained"].as_array().unwrap().iter().map(|h| h.as_array().unwrap().len()).sum();
            assert!(used as u64 <= plan["total_budget"].as_u64().unwrap());
        }
    }
    assert_eq!(plans["schedule"], serde_json::json!([3, 2]));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_trace(dir.path());
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"budgets": [0.5], "policies": ["streaming"], "window": 8, "sinks": 2, "recents": 8}"#).unwrap();
    let cfg = config.display().to_string();
    let report = ok_json(&["eval", "--config", &cfg, "--trace", &trace, "--window", "16", "--top-t", "16"]);
    assert_eq!(report["params"]["window"], 16);
    assert_eq!(report["params"]["sinks"], 2);
    assert_eq!(report["runs"][0]["policy"], "streaming");
    assert_eq!(report["runs"][0]["budget_ratio"], 0.5);
}

#[test]
fn eval_csv_has_one_row_per_head() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_trace(dir.path());
    let out = headcache(&with_small(&["eval", "--trace", &trace, "--policy", "full", "--budget", "0.6", "--format", "csv"]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("policy,budget_ratio,layer,head,class,retained,l2_error,cosine\n"));
    assert_eq!(text.lines().count(), 1 + 16);
}

#[test]
fn all_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_trace(dir.path());
    let outs: Vec<String> = ["a", "b"].iter().map(|n| dir.path().join(n).display().to_string()).collect();
    for out in &outs {
        let summary = ok_json(&with_small(&["all", "--trace", &trace, "--budget", "0.5,0.8", "--out", out]));
        assert_eq!(summary["files"].as_array().unwrap().len(), 3);
    }
    for name in ["report.json", "report.csv", "pca.csv"] {
        let a = std::fs::read(Path::new(&outs[0]).join(name)).unwrap();
        let b = std::fs::read(Path::new(&outs[1]).join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn pca_and_contrib_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_trace(dir.path());
    let points = ok_json(&with_small(&["pca", "--trace", &trace, "--format", "json"]));
    assert_eq!(points.as_array().unwrap().len(), 16);
    let contrib = ok_json(&["contrib", "--seed", "3", "--trials", "10", "--heads", "4"]);
    assert_eq!(contrib["violations"], 0);
    assert_eq!(contrib["config"]["trials"], 10);
    assert_eq!(contrib["config"]["seed"], 3);
}

#[test]
fn failures_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let trace = small_trace(dir.path());

    let missing = error_of(&headcache(&["eval", "--trace", "/definitely/not/here.tkv"]));
    assert_eq!(missing["kind"], "io");
    assert!(missing["message"].as_str().unwrap().contains("here.tkv"));

    let infeasible = headcache(&with_small(&["compress", "--trace", &trace, "--policy", "task-kv", "--budget", "0.1"]));
    assert_eq!(infeasible.status.code(), Some(1));
    assert_eq!(error_of(&infeasible)["kind"], "infeasible-budget");

    let bad_kernel = error_of(&headcache(&with_small(&["eval", "--trace", &trace, "--kernel", "4"])));
    assert_eq!(bad_kernel["kind"], "parameter");

    let garbage = dir.path().join("g.tkv");
    std::fs::write(&garbage, b"NOPE and some more bytes here").unwrap();
    let g = garbage.display().to_string();
    assert_eq!(error_of(&headcache(&["eval", "--trace", &g]))["kind"], "format");

    let usage = headcache(&["eval", "--policy", "nonsense"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(error_of(&usage)["kind"], "usage");
}
