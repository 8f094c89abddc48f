use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fitbd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fitbd")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json_file(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn simulate_into(dir: &Path, name: &str, extra: &[&str]) -> (String, Value) {
    let out = dir.join(name);
    let o = out.to_str().unwrap();
    // lambda 0.5 and r 0 are the simulate defaults
    let mut args = vec!["simulate", "--replicas", "10", "--seed", "7", "--t-max", "20", "--output", o];
    args.extend_from_slice(extra);
    let res = fitbd(&args);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let summary = json_file(&dir.join(format!("{name}.summary.json")));
    (fs::read_to_string(&out).unwrap(), summary)
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, sa) = simulate_into(dir.path(), "a.csv", &[]);
    let (b, sb) = simulate_into(dir.path(), "b.csv", &[]);
    assert_eq!(a, b);
    assert_eq!(sa["times"], sb["times"]);
    assert!(a.starts_with("replica,t,X,phi,age,births\n"));
    assert_eq!(a.lines().count(), 1 + 10 * 21);
}

#[test]
fn simulate_is_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, sa) = simulate_into(dir.path(), "w1.csv", &["--workers", "1"]);
    let (b, sb) = simulate_into(dir.path(), "w8.csv", &["--workers", "8"]);
    assert_eq!(a, b);
    assert_eq!(sa["times"], sb["times"]);
    assert_eq!(sb["config"]["workers"], 8);
}

#[test]
fn summary_carries_schema_and_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let (_, s) = simulate_into(dir.path(), "s.csv", &[]);
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["command"], "simulate");
    let t5 = &s["times"][5];
    assert_eq!(t5["t"], 5.0);
    for key in ["X", "phi", "age"] {
        let q = &t5[key];
        assert!(q["q05"].as_f64().unwrap() <= q["q50"].as_f64().unwrap());
        assert!(q["q50"].as_f64().unwrap() <= q["q95"].as_f64().unwrap());
    }
}

#[test]
fn config_round_trips_through_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (first, s) = simulate_into(dir.path(), "first.csv", &["--lambda", "0.8", "--r", "0.3", "--obs-dt", "2"]);
    let mut cfg = s["config"].clone();
    let second = dir.path().join("second.csv");
    cfg["output"] = Value::String(second.to_str().unwrap().to_string());
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let res = fitbd(&["simulate", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(first, fs::read_to_string(&second).unwrap());
    let s2 = json_file(&dir.path().join("second.csv.summary.json"));
    assert_eq!(s2["config"]["lambda"], 0.8);
    assert_eq!(s2["config"]["obs_dt"], 2.0);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "lambda = 0.3\nr = 0.4\nt_max = 3.0\nreplicas = 2\nformat = \"json\"\n").unwrap();
    let res = fitbd(&["simulate", "--config", cfg.to_str().unwrap(), "--lambda", "0.6"]);
    assert_eq!(code(&res), 0);
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["config"]["lambda"], 0.6);
    assert_eq!(v["config"]["r"], 0.4);
    assert_eq!(v["config"]["replicas"], 2);
    assert_eq!(v["config"]["seed"], 20240601);
    assert_eq!(v["observations"].as_array().unwrap().len(), 2 * 4);
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["simulate", "--t-max", "0"][..],
        &["simulate", "--lambda", "-1"],
        &["simulate", "--replicas", "0"],
        &["simulate", "--no-such-flag"],
        &["verify", "thm1a", "--r", "0.5"],
        &["verify", "thm2b", "--lambda", "0.5"],
        &["verify", "nonsense"],
        &["renewal", "--lambda", "1.5"],
        &["simulate", "--config", "/nonexistent/cfg.toml"],
    ] {
        let res = fitbd(args);
        assert_eq!(code(&res), 2, "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(code(&fitbd(&["--help"])), 0);
}

#[test]
fn verify_exit_codes_follow_the_verdict() {
    let pass = fitbd(&["verify", "coupling", "--replicas", "50"]);
    assert_eq!(code(&pass), 0, "{}", String::from_utf8_lossy(&pass.stderr));
    let v: Value = serde_json::from_slice(&pass.stdout).unwrap();
    assert_eq!(v["target"], "coupling");
    assert_eq!(v["pass"], true);

    // far from the limit the age/t law is not uniform
    let fail = fitbd(&["verify", "thm1a", "--t-max", "0.5", "--replicas", "2000"]);
    assert_eq!(code(&fail), 1);
    let v: Value = serde_json::from_slice(&fail.stdout).unwrap();
    assert_eq!(v["pass"], false);
}

#[test]
fn verify_thm2b_reports_exponential_ks() {
    let res = fitbd(&["verify", "thm2b", "--replicas", "500", "--t-max", "12"]);
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    let check = &v["checks"][0];
    assert!(check["detail"].as_str().unwrap().starts_with("exp"));
    assert_eq!(check["n"], 500);
    assert_eq!(v["config"]["lambda"], 2.0);
}

#[test]
fn couple_reports_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let res = fitbd(&["couple", "--replicas", "30", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&res), 0);
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["violations"], 0);
    assert_eq!(v["replicas"], 30);
    assert!(v["dominance_gap_min"].as_f64().unwrap() >= 0.0);
    let t = fs::read_to_string(&trace).unwrap();
    assert!(t.starts_with("replica,time,X,max_f1,max_fr\n"));
}

#[test]
fn regen_writes_declared_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("regen.csv");
    let exc = dir.path().join("exc.csv");
    let res = fitbd(&[
        "regen", "--t-max", "300", "--replicas", "2", "--output", out.to_str().unwrap(),
        "--excursions", exc.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0);
    let rows = fs::read_to_string(&out).unwrap();
    assert!(rows.starts_with("replica,n,R_n,phi,age\n"));
    assert!(rows.lines().count() > 5);
    assert!(fs::read_to_string(&exc).unwrap().starts_with("replica,n,xi,eta,outcome,epsilon\n"));
    let s = json_file(&dir.path().join("regen.csv.summary.json"));
    assert_eq!(s["regenerations"].as_u64().unwrap() as usize, rows.lines().count() - 1);
}

#[test]
fn renewal_grid_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let grids = dir.path().join("grids");
    let res = fitbd(&[
        "renewal", "--replicas", "500", "--horizon", "40", "--thresholds", "0.5",
        "--grid-out", grids.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    let rep = &v["reports"][0];
    for key in ["v_or_x", "limit", "H_at_horizon", "mu_hat", "censored_fraction"] {
        assert!(rep.get(key).is_some(), "{key}");
    }
    let mu = rep["mu_hat"].as_f64().unwrap().to_string();
    let again = fitbd(&[
        "renewal", "--f-input", grids.join("F.csv").to_str().unwrap(),
        "--h-input", grids.join("h_0.csv").to_str().unwrap(), "--mu", &mu,
    ]);
    assert_eq!(code(&again), 0);
    let w: Value = serde_json::from_slice(&again.stdout).unwrap();
    let (a, b) = (rep["limit"].as_f64().unwrap(), w["reports"][0]["limit"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn gof_addresses_laws_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    let body: String = (0..400).map(|i| format!("{}\n", (i as f64 + 0.5) / 400.0)).collect();
    fs::write(&input, format!("x\n{body}")).unwrap();
    let i = input.to_str().unwrap();
    assert_eq!(code(&fitbd(&["gof", "--input", i, "--law", "uniform"])), 0);
    assert_eq!(code(&fitbd(&["gof", "--input", i, "--law", "power:4"])), 1);
    assert_eq!(code(&fitbd(&["gof", "--input", i, "--law", "exp:0"])), 2);
}

#[test]
fn explore_conjecture_needs_supercritical_random_killing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let ok = fitbd(&["explore-conjecture", "--replicas", "10", "--t-max", "4", "--output", out.to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    let s = json_file(&dir.path().join("e.csv.summary.json"));
    assert_eq!(s["rows"].as_array().unwrap().len(), 5);
    assert_eq!(code(&fitbd(&["explore-conjecture", "--r", "0"])), 2);
}
