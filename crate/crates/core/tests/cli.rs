use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparse-sir"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("SPARSE_SIR_PARALLEL").output().unwrap()
}

fn simulate(dir: &Path, n: usize, d: usize) -> String {
    let path = dir.join("data.csv");
    let out = run(&[
        "simulate",
        "--setting",
        "1",
        "--n",
        &n.to_string(),
        "--d",
        &d.to_string(),
        "--seed",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_writes_data_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), 50, 6);
    let mut reader = csv::Reader::from_path(&path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["y", "x1", "x2", "x3", "x4", "x5", "x6"]);
    assert_eq!(reader.records().count(), 50);
    let truth: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["support"], serde_json::json!([1, 2, 3]));
    assert_eq!(truth["k"], 1);
}

#[test]
fn fit_reports_one_based_support_and_dumps_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), 300, 8);
    let dump = dir.path().join("pi.bin");
    let json = dir.path().join("fit.json");
    let out = run(&[
        "fit",
        &path,
        "--k",
        "1",
        "--rho",
        "0.05",
        "--dump-pi",
        dump.to_str().unwrap(),
        "--out",
        json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(fit["support"], serde_json::json!([1, 2, 3]));
    assert_eq!(fit["pi_diagonal"].as_array().unwrap().len(), 8);
    assert_eq!(fit["directions"].as_array().unwrap().len(), 1);

    let bytes = std::fs::read(&dump).unwrap();
    assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()), 8);
    assert_eq!(bytes.len(), 8 + 64 * 8);
    let entry = |i: usize, j: usize| {
        let at = 8 + 8 * (i * 8 + j);
        f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
    };
    let diag: Vec<f64> = fit["pi_diagonal"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (i, &d) in diag.iter().enumerate() {
        assert_eq!(entry(i, i), d);
        for j in 0..8 {
            assert_eq!(entry(i, j), entry(j, i));
        }
    }
}

#[test]
fn fit_prints_json_to_stdout_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), 60, 5);
    let out = run(&["fit", &path, "--method", "diff"]);
    assert!(out.status.success());
    let fit: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fit["estimator"], "sir:diff");
    let expected = 2.0 * ((5f64).ln() / 60.0).sqrt();
    assert!((fit["rho"].as_f64().unwrap() - expected).abs() < 1e-15);
}

#[test]
fn usage_and_input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), 40, 4);
    assert_eq!(run(&["fit", &path, "--k", "0"]).status.code(), Some(2));
    assert_eq!(run(&["fit", &path, "--k", "5"]).status.code(), Some(2));
    assert_eq!(run(&["fit", "/nonexistent/data.csv"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,x1,x2\n1.0,2.0,3.0\n2.0,abc,1.0\n").unwrap();
    let out = run(&["fit", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row 3") && msg.contains("column 2"), "{msg}");
}

#[test]
fn tune_reports_grid_and_best_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = simulate(dir.path(), 100, 6);
    let out = run(&[
        "tune",
        &path,
        "--k-grid",
        "1,2",
        "--rho-grid",
        "0.3,0.1,0.03",
        "--folds",
        "4",
        "--seed",
        "9",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["errors"].as_array().unwrap().len(), 6);
    let best_k = v["report"]["best"]["k"].as_u64().unwrap();
    assert!(best_k == 1 || best_k == 2);
}

#[test]
fn benchmark_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "benchmark",
        "fig1",
        "--replicates",
        "2",
        "--d",
        "10",
        "--n",
        "100,200",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["fig1_replicates.csv", "fig1_summary.csv", "fig1_manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let rows = csv::Reader::from_path(dir.path().join("fig1_replicates.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(rows, 4);
}
