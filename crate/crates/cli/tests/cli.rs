use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wfexact"));
    cmd.args(args).current_dir(dir).env_remove("WF_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("run wfexact")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args, &[]).status.code().unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

fn with_benchmark() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let csv = ok(dir.path(), &["--threads", "1", "simulate", "--set", "n_obs=20"]);
    std::fs::write(dir.path().join("bench.csv"), csv).unwrap();
    dir
}

#[test]
fn simulate_writes_the_benchmark_series_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let csv = ok(dir.path(), &["simulate"]);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# wfexact "));
    let config: Value = serde_json::from_str(lines.next().unwrap().strip_prefix("# config ").unwrap()).unwrap();
    assert_eq!(config["theta"], 0.7);
    assert_eq!(config["theta_A"], 0.02);
    assert_eq!(lines.next(), Some("time,x1"));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 101);
    assert_eq!(rows[0], "0,0.5");
    assert!(rows[100].starts_with("100,"));
}

#[test]
fn coupled_config_gives_three_columns() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        "model = \"coupled\"\ns = [[0.3, 0.0], [0.1, 0.0]]\n\
         h = [[[[0.0, 0.0], [0.0, 0.0]], [[0.2, 0.0], [0.0, 0.0]]], [[[0.2, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]]\n\
         n_obs = 5\n",
    )
    .unwrap();
    let csv = ok(dir.path(), &["simulate", "--config", "c.toml"]);
    assert!(csv.contains("\ntime,x1,x2\n"));
    assert!(data_rows(&csv).iter().all(|r| r.split(',').count() == 3));
}

#[test]
fn estimate_smoke_run_emits_sorted_json() {
    let dir = with_benchmark();
    let out = ok(dir.path(), &["estimate", "--data", "bench.csv", "--set", "n_samples=1"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    for key in ["theta_hat", "log_lik", "N", "seed", "evaluations", "converged", "config", "version"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["N"], 1);
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let pos: Vec<usize> = ["\"N\"", "\"approx_points\"", "\"config\"", "\"converged\""]
        .iter()
        .map(|k| out.find(k).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "keys are not written in sorted order");
}

#[test]
fn seed_comes_from_environment_then_flags() {
    let dir = with_benchmark();
    let args = ["estimate", "--data", "bench.csv", "--set", "n_samples=2"];
    let v: Value = serde_json::from_slice(&run(dir.path(), &args, &[("WF_SEED", "9")]).stdout).unwrap();
    assert_eq!(v["seed"], 9);
    let mut with_flag = args.to_vec();
    with_flag.extend(["--set", "seed=4"]);
    let v: Value = serde_json::from_slice(&run(dir.path(), &with_flag, &[("WF_SEED", "9")]).stdout).unwrap();
    assert_eq!(v["seed"], 4);
}

#[test]
fn grid_maximum_is_near_the_estimate() {
    let dir = with_benchmark();
    let grid = ok(dir.path(), &["loglik-grid", "--data", "bench.csv", "--points", "41", "--set", "n_samples=20"]);
    let points: Vec<(f64, f64)> = data_rows(&grid)
        .iter()
        .map(|r| {
            let (a, b) = r.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(points.len(), 41);
    assert_eq!((points[0].0, points[40].0), (-1.0, 1.0));
    let est: Value =
        serde_json::from_str(&ok(dir.path(), &["estimate", "--data", "bench.csv", "--set", "n_samples=20"])).unwrap();
    let hat = est["theta_hat"][0].as_f64().unwrap();
    let best = points.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    assert!((best.0 - hat).abs() <= 0.05 / 2.0 + 1e-9, "grid argmax {} vs estimate {hat}", best.0);
    assert!(est["log_lik"].as_f64().unwrap() >= best.1 - 1e-9);

    let three = ok(dir.path(), &["loglik-grid", "--data", "bench.csv", "--points", "3", "--set", "n_samples=5"]);
    assert_eq!(data_rows(&three).len(), 3);
}

#[test]
fn bootstrap_smoke_run() {
    let dir = with_benchmark();
    let out = ok(
        dir.path(),
        &["bootstrap", "--data", "bench.csv", "--replicates", "2", "--set", "n_samples=5"],
    );
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["B"], 2);
    assert_eq!(v["unit"], "samples");
    assert_eq!(v["maximizers"].as_array().unwrap().len(), 2);
    assert!(v["se"][0].as_f64().unwrap() >= 0.0);
    let out = ok(
        dir.path(),
        &["bootstrap", "--data", "bench.csv", "--replicates", "2", "--bootstrap-unit", "observations", "--set", "n_samples=5"],
    );
    assert_eq!(serde_json::from_str::<Value>(&out).unwrap()["unit"], "observations");
}

#[test]
fn cache_is_reused_and_checked() {
    let dir = with_benchmark();
    let args = ["estimate", "--data", "bench.csv", "--set", "n_samples=10", "--cache", "draws.json"];
    let first = ok(dir.path(), &args);
    assert!(dir.path().join("draws.json").exists());
    let second = ok(dir.path(), &args);
    assert_eq!(first, second);
    let mut other_seed = args.to_vec();
    other_seed.extend(["--set", "seed=2"]);
    assert_eq!(code(dir.path(), &other_seed), 2);
}

#[test]
fn exit_codes() {
    let dir = with_benchmark();
    let d = dir.path();
    assert_eq!(code(d, &["estimate", "--data", "bench.csv", "--set", "no_such_key=1"]), 2);
    assert_eq!(code(d, &["estimate", "--data", "bench.csv", "--set", "theta_a=-1.0"]), 2);
    assert_eq!(code(d, &["estimate"]), 2);
    assert_eq!(code(d, &["simulate", "--threads", "0"]), 2);

    std::fs::write(d.join("edge.csv"), "time,x1\n0,0.5\n1,1.0\n").unwrap();
    let out = run(d, &["estimate", "--data", "edge.csv"], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    std::fs::write(d.join("close.csv"), "time,x1\n0,0.5\n0.01,0.4\n").unwrap();
    assert_eq!(code(d, &["estimate", "--data", "close.csv"]), 3);
    assert_eq!(code(d, &["estimate", "--data", "missing.csv"]), 3);

    assert_eq!(code(d, &["simulate", "--set", "rejection_budget=1", "--set", "theta=-1.0"]), 4);
    assert_eq!(
        code(d, &["estimate", "--data", "bench.csv", "--set", "n_samples=2", "--set", "max_eval=2"]),
        4
    );
}

#[test]
fn small_gaps_need_the_approximation_flag() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("close.csv"), "time,x1\n0,0.5\n0.01,0.45\n1,0.4\n").unwrap();
    let out = ok(
        dir.path(),
        &["estimate", "--data", "close.csv", "--approx-small-t", "--set", "n_samples=5"],
    );
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["config"]["approx_small_t"], true);
}
