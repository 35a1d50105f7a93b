use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qmcs(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmcs"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid json")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bernoulli.json"), r#"{"support":[[0,0.75],[1,0.25]]}"#).unwrap();
    std::fs::write(dir.path().join("c4.txt"), "# 4-cycle\n4 4\n0 1\n1 2\n2 3\n3 0\n").unwrap();
    dir
}

#[test]
fn records_embed_schema_constants_and_ledger() {
    let dir = workspace();
    let v = json(&qmcs(
        &["mean", "--dist", "bernoulli.json", "--method", "bounded", "--eps", "0.01", "--seed", "7", "--c-r", "2"],
        dir.path(),
    ));
    assert_eq!(v["schema"], 1);
    assert_eq!(v["constants"]["c_r"], 2.0);
    assert!(v["constants"]["D"].as_f64().unwrap() >= 10.0);
    let est = &v["result"]["estimates"][0];
    assert!(est["ledger"]["reflection_uses"].as_u64().unwrap() > 0);
    assert!((est["value"].as_f64().unwrap() - 0.25).abs() < 0.05);
}

#[test]
fn partition_on_matchings_of_c4_recovers_seven() {
    let dir = workspace();
    let v = json(&qmcs(
        &["partition", "--model", "matching", "--graph", "c4.txt", "--eps", "0.2", "--seed", "3"],
        dir.path(),
    ));
    assert_eq!(v["result"]["exact_z"], 7.0);
    assert!((v["result"]["z_value"].as_f64().unwrap() - 7.0).abs() <= 0.2 * 7.0);
    assert_eq!(v["params"]["direction"], "reversed");
    assert_eq!(v["params"]["mode"], "ideal_sampling");
}

#[test]
fn bench_writes_csv_to_out_path() {
    let dir = workspace();
    let out = qmcs(
        &["bench", "--sweep", "eps=0.1,0.05,0.02,0.01", "--method", "variance", "--trials", "4", "--out", "b.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("eps,reflections,classical_samples,error"));
    let rows: Vec<&str> = lines.filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("0.1,"));
}

#[test]
fn exit_codes_separate_config_io_and_contract_failures() {
    let dir = workspace();
    let code = |args: &[&str]| qmcs(args, dir.path()).status.code();
    assert_eq!(code(&["mean", "--dist", "bernoulli.json", "--eps", "-1"]), Some(1));
    assert_eq!(code(&["mean", "--dist", "bernoulli.json", "--method", "nonsense"]), Some(1));
    assert_eq!(code(&["bench", "--sweep", "eps="]), Some(1));
    assert_eq!(code(&["mean", "--dist", "missing.json"]), Some(2));
    assert_eq!(code(&["model", "--model", "ising", "--graph", "missing.txt"]), Some(2));
    // K2 from 0 straight to infinity has ratio 2, which B = 1.5 forbids.
    assert_eq!(
        code(&["partition", "--model", "ising", "--graph", "complete:2", "--betas", "0,inf", "--B", "1.5"]),
        Some(3)
    );
}

#[test]
fn thread_cap_is_validated() {
    let dir = workspace();
    let out = Command::new(env!("CARGO_BIN_EXE_qmcs"))
        .args(["model", "--model", "ising", "--graph", "complete:2"])
        .env("QMCS_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
