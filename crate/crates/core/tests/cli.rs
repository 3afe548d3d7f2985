//! End-to-end tests of the command-line interface through the compiled
//! binary: exit codes, record shape, the pool -> estimate pipeline, plot
//! CSV round trips, and thread-count independence.

use irg_ldp::cli::read_plot_data;
use irg_ldp::experiments::{read_jsonl, RunRecord};
use serde_json::Value;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const BIN: &str = env!("CARGO_BIN_EXE_irg-ldp");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON record")
}

fn strip_timestamp(v: &Value) -> Value {
    let mut m = v.as_object().expect("record is an object").clone();
    assert!(m.remove("timestamp").is_some(), "record carries a timestamp");
    Value::Object(m)
}

/// One shared pool file for the estimate subcommands.
fn pool_file() -> &'static Path {
    static POOL: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_dir, path) = POOL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.json");
        let out = run(&[
            "pool", "--alpha", "2.5", "--sigma", "1", "--q", "0.5", "--trees", "4000",
            "--size-cap", "400", "--seed", "99", "--out",
            path.to_str().unwrap(),
        ]);
        let v = stdout_json(&out);
        assert_eq!(v["schema"], "pool/1");
        assert_eq!(v["seed"], 99);
        assert_eq!(v["trees"], 4000);
        (dir, path)
    });
    path
}

fn pool_arg() -> &'static str {
    pool_file().to_str().unwrap()
}

#[test]
fn oracle_record_matches_frozen_law() {
    let out = run(&[
        "oracle", "--alpha", "3.5", "--sigma", "1", "--q", "0.7", "--weights", "1,1.5,2,3",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["schema"], "oracle/1");
    assert_eq!(v["n_model"], 4);
    let law: Vec<f64> =
        v["law"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let want = [
        0.009734308593750006,
        0.10785723046875004,
        0.27793259375000007,
        0.6044758671875,
    ];
    for (got, want) in law.iter().zip(want.iter()) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_alpha_exits_2_with_the_constraint() {
    let out = run(&["oracle", "--alpha", "0.9", "--sigma", "1", "--q", "0.5", "--weights", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha must satisfy alpha > 1"), "stderr: {err}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["theta", "--bogus", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_pool_file_exits_3() {
    let out = run(&["theta", "--pool", "/nonexistent/never/pool.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn theta_reports_a_bracketing_interval() {
    let out = run(&["theta", "--pool", pool_arg()]);
    let v = stdout_json(&out);
    assert_eq!(v["schema"], "theta/1");
    let (lo, hat, hi) = (
        v["ci_lo"].as_f64().unwrap(),
        v["theta_hat"].as_f64().unwrap(),
        v["ci_hi"].as_f64().unwrap(),
    );
    assert!(0.0 <= lo && lo <= hat && hat <= hi && hi <= 1.0);
    assert!(hat > 0.3 && hat < 0.7, "theta_hat {hat}");
}

#[test]
fn hubs_record_has_the_contract_fields() {
    let out = run(&["hubs", "--pool", pool_arg(), "--rho", "0.68"]);
    let v = stdout_json(&out);
    assert_eq!(v["schema"], "hubs/1");
    assert_eq!(v["seed"], 99);
    assert!(v["hubs_value"].as_f64().unwrap() >= 0.0);
    assert!(v["hubs_ceil"].as_u64().is_some());
    assert!(v["theta_hat"].as_f64().unwrap() > 0.0);
    assert!(v["status"].is_string());
}

#[test]
fn below_threshold_constant_exits_2() {
    let out = run(&[
        "constant", "--pool", pool_arg(), "--rho", "0.0001", "--draws", "100", "--seed", "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn records_are_identical_across_thread_counts() {
    let a = run(&["hubs", "--pool", pool_arg(), "--rho", "0.68", "--threads", "1"]);
    let b = run(&["hubs", "--pool", pool_arg(), "--rho", "0.68", "--threads", "3"]);
    let va = strip_timestamp(&stdout_json(&a));
    let vb = strip_timestamp(&stdout_json(&b));
    assert_eq!(
        serde_json::to_string(&va).unwrap(),
        serde_json::to_string(&vb).unwrap()
    );
}

#[test]
fn conditional_writes_matching_plot_and_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let plot = dir.path().join("curve.csv");
    let runs = dir.path().join("runs.jsonl");
    let out = run(&[
        "conditional", "--pool", pool_arg(), "--n", "400", "--reps", "6", "--rho", "0.68",
        "--seed", "7", "--grid-points", "6", "--draws", "3000",
        "--plot-out", plot.to_str().unwrap(),
        "--runs-out", runs.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["schema"], "conditional/1");
    assert_eq!(v["h"], 1);
    let grid = v["grid"].as_array().unwrap();
    assert_eq!(grid.len(), 6);

    // the CSV round-trips to exactly the grid in the record
    let file = std::fs::File::open(&plot).unwrap();
    let points = read_plot_data(BufReader::new(file)).unwrap();
    assert_eq!(points.len(), grid.len());
    for (p, g) in points.iter().zip(grid.iter()) {
        assert_eq!(p.s, g["s"].as_f64().unwrap());
        assert_eq!(p.empirical_survival, g["empirical_survival"].as_f64().unwrap());
        assert_eq!(p.predicted_ratio, g["predicted_ratio"].as_f64().unwrap());
    }
    assert_eq!(points[0].s, 0.68);
    assert_eq!(points[0].predicted_ratio, 1.0);

    // the JSONL store holds one record per replication, in order
    let records: Vec<RunRecord> = read_jsonl(&runs).unwrap();
    assert_eq!(records.len(), 6);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.rep, i);
        assert!(!r.planted.is_empty());
    }
}

#[test]
fn coupling_subcommand_reports_no_violations() {
    let out = run(&[
        "couple", "--pool", pool_arg(), "--n", "500", "--delta", "0.25", "--reps", "2",
        "--seed", "3", "--eps", "0.5", "--ell-max", "3",
    ]);
    let v = stdout_json(&out);
    assert_eq!(v["schema"], "couple/1");
    assert_eq!(v["subset_violations"], 0);
    assert!(v["mean_edge_difference_per_n"].as_f64().unwrap() >= 0.0);
}
