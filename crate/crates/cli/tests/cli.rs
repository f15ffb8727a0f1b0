use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bucketing(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bucketing"))
        .arg("--output-dir")
        .arg(dir)
        .arg("--mask-timestamps")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn diagnose_default_run() {
    let tmp = TempDir::new().unwrap();
    let out = bucketing(tmp.path(), &["diagnose"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("o4=0 in 100%"));
    let r = report(tmp.path());
    assert_eq!(r["buckets"][0]["size"], 48);
    assert_eq!(r["provenance"]["finished_at"], "masked");
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let config = tmp.path().join("run.json");
    fs::write(
        &config,
        r#"{"diagnosis": {"gamma": 1.0, "sampling": {"kind": "per_class", "per_class": 4}}}"#,
    )
    .unwrap();
    let out = bucketing(
        tmp.path(),
        &[
            "--config",
            config.to_str().unwrap(),
            "--align",
            "o5=var:o5",
            "--per-class",
            "3",
            "diagnose",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let r = report(tmp.path());
    assert_eq!(r["nodes"], 24);
    assert_eq!(r["global_iia"], 1.0);
    assert_eq!(r["buckets"].as_array().unwrap().len(), 1);
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["diagnosis"]["gamma"], 1.0);
}

#[test]
fn stage_failures_set_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = bucketing(tmp.path(), &["--gamma", "0", "diagnose"]);
    assert_eq!(out.status.code(), Some(10));
    assert!(stderr(&out).contains("config stage failed"));

    let out = bucketing(tmp.path(), &["--vocab", "1", "generate"]);
    assert_eq!(out.status.code(), Some(11));
    assert!(
        stderr(&out).contains("vocabulary size must be at least 2"),
        "{}",
        stderr(&out)
    );

    let out = bucketing(tmp.path(), &["--align", "o5=unit:L0:0", "diagnose"]);
    assert_eq!(out.status.code(), Some(15));

    let out = bucketing(tmp.path(), &["--align", "o5", "diagnose"]);
    assert_eq!(out.status.code(), Some(10));

    let out = bucketing(tmp.path(), &["recurse", "--promote", "o3=and(o1,o2)"]);
    assert_eq!(out.status.code(), Some(20));
    assert!(stderr(&out).contains("duplicate variable"));
}

#[test]
fn recurse_with_flags() {
    let tmp = TempDir::new().unwrap();
    let out = bucketing(
        tmp.path(),
        &[
            "recurse",
            "--promote",
            "o4=and(o1,o2)",
            "--rewire",
            "o5=or(o4,o3)",
            "--align-to",
            "var:o1",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("hierarchy: o1,o2,o3 -> o4 -> o5"));
    let pass: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("pass1/report.json")).unwrap())
            .unwrap();
    assert_eq!(pass["buckets"][0]["size"], 32);
    assert_eq!(pass["buckets"][0]["wire_majority"]["o1"]["value"], false);
    assert_eq!(pass["buckets"][0]["wire_majority"]["o1"]["fraction"], 1.0);
}

#[test]
fn recurse_from_promotion_file() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("promote.json");
    fs::write(
        &file,
        r#"[{"variable": {"name": "o4", "parents": ["o1", "o2"], "op": "and"},
            "consumers": [{"name": "o5", "parents": ["o4", "o3"], "op": "or"}],
            "align_to": {"kind": "variable", "name": "o1"},
            "readout": {"kind": "variable", "name": "o4"}}]"#,
    )
    .unwrap();
    let out = bucketing(
        tmp.path(),
        &["recurse", "--promotions", file.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("recurse_report.json").is_file());
}

#[test]
fn generate_classify_export_and_sweep() {
    let tmp = TempDir::new().unwrap();
    let out = bucketing(tmp.path(), &["--n", "300", "generate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = fs::read_to_string(tmp.path().join("dataset.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 301);
    assert!(tmp.path().join("dataset_balance.json").is_file());

    assert!(bucketing(tmp.path(), &["diagnose"]).status.success());
    let out = bucketing(tmp.path(), &["classify"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("agreement 1.0000"));
    assert!(bucketing(tmp.path(), &["export"]).status.success());
    assert!(tmp.path().join("features_hand.csv").is_file());

    let out = bucketing(tmp.path(), &["--search", "sweep"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("o5: best var:o5 IIA 1.0000"));
}

#[test]
fn untrained_checkpoint_is_still_written() {
    let tmp = TempDir::new().unwrap();
    let out = bucketing(
        tmp.path(),
        &["train", "--epochs", "0", "--train-size", "500"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("train_report.json")).unwrap())
            .unwrap();
    assert!(report["report"]["test_accuracy"].as_f64().unwrap() < 0.9);
    assert!(tmp.path().join("mlp.json").is_file());

    let missing = bucketing(
        tmp.path(),
        &["--checkpoint", "/nonexistent/mlp.json", "diagnose"],
    );
    assert_eq!(missing.status.code(), Some(10));
}
