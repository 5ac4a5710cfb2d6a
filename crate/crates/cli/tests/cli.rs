use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crossmarket"));
    c.env_remove("CROSSMARKET_DATA_DIR").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr)));
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
    v["error"].as_str().unwrap().to_string()
}

/// Synthetic data in `<tmp>/data` with quick screening settings.
fn workspace(n: &str, days: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--n-source", n, "--n-target", n, "--n-dates", days, "--edge-density", "0.2", "--seed", "3", "--out", "data"], dir.path());
    dir
}

const QUICK: [&str; 4] = ["--data-dir", "data", "--window", "60"];

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn validate_accepts_synth_output() {
    let ws = workspace("6", "120");
    let out = ok(&["validate", "--data-dir", "data"], ws.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v[0]["n_stocks"], 6);
    assert_eq!(v[1]["market"], "CN");
    ok(&["validate", "--file", "data/cn.csv", "--market", "CN"], ws.path());
}

#[test]
fn graph_then_backtest_writes_full_summary() {
    let ws = workspace("8", "140");
    ok(&[&["graph"], &QUICK[..], &["--out", "g"]].concat(), ws.path());
    for f in ["edges.csv", "in_degree.csv", "biadjacency_mean.csv", "sector_median.csv", "manifest.json"] {
        assert!(ws.path().join("g").join(f).exists(), "{f}");
    }
    ok(&[&["backtest"], &QUICK[..], &["--span-days", "12", "--out", "b"]].concat(), ws.path());
    let summary = fs::read_to_string(ws.path().join("b/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 10 * 6);
    ok(&["report", "--run", "b"], ws.path());
    let sr = fs::read_to_string(ws.path().join("b/sr_table.csv")).unwrap();
    assert_eq!(sr.lines().next().unwrap(), "model,qr1,qr2,qr3,qr4,qr5,qr6");
    assert_eq!(sr.lines().count(), 11);
    let cum = fs::read_to_string(ws.path().join("b/cum_pnl.csv")).unwrap();
    assert_eq!(cum.lines().count(), 1 + 12);
}

#[test]
fn zero_randomization_reproduces_the_backtest() {
    let ws = workspace("8", "140");
    let models = ["--models", "OLS,RIDGE,XGB"];
    ok(&[&["backtest"], &QUICK[..], &models, &["--out", "b"]].concat(), ws.path());
    ok(&[&["experiment"], &QUICK[..], &models, &["--kind", "edge_randomization", "--fractions", "0", "--out", "e"]].concat(), ws.path());
    let plain = fs::read(ws.path().join("b/summary.csv")).unwrap();
    let zero = fs::read(ws.path().join("e/fraction0_seed0/summary.csv")).unwrap();
    assert_eq!(plain, zero);
    assert!(ws.path().join("e/edge_randomization.csv").exists());
}

#[test]
fn worker_count_and_manifest_reruns_are_byte_identical() {
    let ws = workspace("8", "140");
    let base = [&["backtest"], &QUICK[..], &["--models", "OLS,XGB,RF,ENS_AVG"]].concat();
    ok(&[&base[..], &["--workers", "1", "--out", "w1"]].concat(), ws.path());
    ok(&[&base[..], &["--workers", "8", "--out", "w8"]].concat(), ws.path());
    let w1 = files(&ws.path().join("w1"));
    assert!(w1.len() > 10);
    assert_eq!(w1, files(&ws.path().join("w8")));
    ok(&["backtest", "--manifest", "w1/manifest.json", "--out", "again"], ws.path());
    assert_eq!(w1, files(&ws.path().join("again")));
}

#[test]
fn default_output_goes_under_the_run_hash() {
    let ws = workspace("6", "120");
    let out = ok(&[&["backtest"], &QUICK[..], &["--models", "OLS", "--span-days", "5"]].concat(), ws.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let hash = v["run_hash"].as_str().unwrap();
    assert!(ws.path().join("runs").join(hash).join("manifest.json").exists());
}

#[test]
fn failures_are_reported_as_json() {
    let ws = workspace("6", "120");
    assert_eq!(error_kind(&run(&["backtest", "--us", "missing.csv", "--cn", "data/cn.csv"], ws.path())), "DataError");
    assert_eq!(error_kind(&run(&["backtest"], ws.path())), "ConfigError");
    assert_eq!(error_kind(&run(&["backtest", "--no-such-flag"], ws.path())), "ConfigError");
    assert_eq!(error_kind(&run(&[&["experiment"], &QUICK[..], &["--kind", "edge_randomization", "--fractions", "1.5"]].concat(), ws.path())), "PlanError");
    assert_eq!(error_kind(&run(&[&["backtest"], &QUICK[..], &["--models", "OLS,PERCEPTRON"]].concat(), ws.path())), "ConfigError");
    fs::write(ws.path().join("bad.toml"), "[backtest]\nretrain_every = 0\n").unwrap();
    let out = run(&[&["backtest"], &QUICK[..], &["--config", "bad.toml"]].concat(), ws.path());
    assert_eq!(error_kind(&out), "ConfigError");
    assert!(String::from_utf8_lossy(&out.stderr).contains("retrain_every"));
    fs::write(ws.path().join("data/bad.csv"), "date,ticker,open,close,volume,market_cap,sector\n2021-01-04,SPY,1,1,1,1,ETF\n2021-01-04,AAA,-1,1,1,1,X\n").unwrap();
    let out = run(&["validate", "--file", "data/bad.csv"], ws.path());
    assert_eq!(error_kind(&out), "DataError");
    assert!(String::from_utf8_lossy(&out.stderr).contains("row"));
}

#[test]
fn changed_inputs_invalidate_a_manifest() {
    let ws = workspace("6", "120");
    ok(&[&["backtest"], &QUICK[..], &["--models", "OLS", "--span-days", "5", "--out", "b"]].concat(), ws.path());
    let cn = ws.path().join("data/cn.csv");
    let mut text = fs::read_to_string(&cn).unwrap();
    text.push('\n');
    fs::write(&cn, text).unwrap();
    assert_eq!(error_kind(&run(&["backtest", "--manifest", "b/manifest.json"], ws.path())), "DataError");
}
