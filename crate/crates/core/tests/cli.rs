use std::path::Path;
use std::process::{Command, Output};

use acmc::bintree::Codebook;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acmc")).args(args).current_dir(dir).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn bad_config_field_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{"task": {"kind": "copy", "vocab_size": "four", "length": 3}}"#);
    let out = run(dir.path(), &["train", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("task.vocab_size"), "{}", stderr(&out));
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{"task": {"kind": "copy", "vocab_size": 4, "length": 3}, "learning_rat": 0.1}"#);
    let out = run(dir.path(), &["train", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rat"));
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{"task": {"kind": "copy", "vocab_size": 1, "length": 3}}"#);
    let out = run(dir.path(), &["variance", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("vocab_size"));
}

#[test]
fn zero_iterations_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{"task": {"kind": "copy", "vocab_size": 4, "length": 3}, "iterations": 0}"#);
    let out = run(dir.path(), &["train", "--config", "c.json", "--out", "m.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv, "iteration,mean_reward,rollout_count,cumulative_rollouts,mean_unique_pseudo,t0,t1,t2\n");
}

#[test]
fn train_csv_without_out_goes_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"task": {"kind": "copy", "vocab_size": 4, "length": 2}, "iterations": 3, "estimator": {"kind": "ars_k", "k": 2}}"#,
    );
    let out = run(dir.path(), &["train", "--config", "c.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn tree_head_metrics_have_depth_columns() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        r#"{"task": {"kind": "copy", "vocab_size": 8, "length": 2}, "head": "tree",
            "estimator": {"kind": "bt_arsm"}, "iterations": 2}"#,
    );
    let out = run(dir.path(), &["train", "--config", "c.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().next().unwrap().ends_with(",t0,t1,d0,d1,d2"));
}

#[test]
fn tree_build_four_words_gives_depth_two() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "e.txt", "a 0 0\nb 0 0.1\nc 5 5\nd 5 5.1\n");
    write(dir.path(), "c.json", r#"{"tree": {"embedding_path": "e.txt"}}"#);
    let out = run(dir.path(), &["tree-build", "--config", "c.json", "--out", "cb.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cb = Codebook::from_json(&std::fs::read_to_string(dir.path().join("cb.json")).unwrap()).unwrap();
    assert_eq!(cb.depth(), 2);
    assert_eq!(cb.labels(), ["a", "b", "c", "d"]);
    let a = cb.word_to_path(0).unwrap();
    let b = cb.word_to_path(1).unwrap();
    assert_eq!(a[0], b[0]);
}

#[test]
fn tree_build_two_words_gives_depth_one() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "e.txt", "x 1\ny 2\n");
    write(dir.path(), "c.json", r#"{"tree": {"embedding_path": "e.txt"}}"#);
    let out = run(dir.path(), &["tree-build", "--config", "c.json", "--out", "cb.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cb = Codebook::from_json(&std::fs::read_to_string(dir.path().join("cb.json")).unwrap()).unwrap();
    assert_eq!(cb.depth(), 1);
}

#[test]
fn malformed_embedding_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "e.txt", "a 0 0\nb 0 zero\n");
    write(dir.path(), "c.json", r#"{"tree": {"embedding_path": "e.txt"}}"#);
    let out = run(dir.path(), &["tree-build", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("e.txt:2:"), "{}", stderr(&out));
}

#[test]
fn tree_build_without_embedding_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", "{}");
    let out = run(dir.path(), &["tree-build", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tree.embedding_path"));
}

fn oracle_config(extra: &str) -> String {
    format!(
        r#"{{"seed": 3, "task": {{"kind": "copy", "vocab_size": 3, "length": 2}},
            "policy": {{"init_scale": 0.3}},
            "oracle": {{"samples": 20000, "fd_instances": 2, "fast_naive_instances": 200}}{extra}}}"#
    )
}

#[test]
fn oracle_check_passes_and_lists_each_suite_once() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", &oracle_config(""));
    let out = run(dir.path(), &["oracle-check", "--config", "c.json", "--out", "r.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    let mut names: Vec<String> = report["suites"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["suite"].as_str().unwrap().to_string())
        .collect();
    assert!(names.iter().any(|n| n == "unbiasedness:arsm"));
    assert!(names.iter().any(|n| n == "unbiasedness:bt_arsm"));
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}

#[test]
fn sign_flip_fails_oracle_check() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.json",
        &oracle_config(r#", "fault_injection": "sign_flip", "estimators": [{"kind": "arsm"}]"#),
    );
    let out = run(dir.path(), &["oracle-check", "--config", "c.json", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unbiasedness:arsm"));
}

#[test]
fn oracle_check_refuses_large_tasks() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{"task": {"kind": "copy", "vocab_size": 64, "length": 5}}"#);
    let out = run(dir.path(), &["oracle-check", "--config", "c.json", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("enumeration budget"));
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn seed_flag_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.json", r#"{"task": {"kind": "copy", "vocab_size": 4, "length": 3}, "iterations": 5}"#);
    let a = run(dir.path(), &["train", "--config", "c.json", "--seed", "1"]);
    let b = run(dir.path(), &["train", "--config", "c.json", "--seed", "2"]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(a.stdout, b.stdout);
}
