//! End-to-end runs of the `regime` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn regime(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_regime"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(dir.join("out"))
        .env_remove("REGIME_OUTPUT_DIR")
        .env_remove("REGIME_WORKERS")
        .output()
        .unwrap()
}

fn stdout_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 1, "summary is one line: {text}");
    serde_json::from_str(&text).unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap()
}

const SMALL_MERTON: &str = "[grid]\nn_t = 16\nn_x = 41\n";

#[test]
fn equilibrium_writes_a_log_whose_final_residual_meets_the_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), SMALL_MERTON, &["equilibrium"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["command"], "equilibrium");
    let log = std::fs::read_to_string(dir.path().join("out/residual_log.jsonl")).unwrap();
    let last: Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert!(last["residual"].as_f64().unwrap() <= 1e-10);
    assert!(summary["result"]["final_residual"].as_f64().unwrap() <= 1e-10);
    for f in ["value.csv", "strategy.csv", "config.toml", "manifest.json"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn manifest_checksums_match_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), "[model]\npreset = \"tanh_switching\"\n[rates]\npaths = 500\n", &["rates"]);
    assert_eq!(o.status.code(), Some(0));
    let out = dir.path().join("out");
    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert!(artifacts.contains_key("rates.csv"));
    for (name, entry) in artifacts {
        let bytes = std::fs::read(out.join(name)).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(entry["sha256"].as_str().unwrap(), hex, "{name}");
    }
}

#[test]
fn frozen_geometry_rates_are_exact_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), "[model]\npreset = \"frozen\"\n[rates]\npaths = 1000\n", &["rates"]);
    assert_eq!(o.status.code(), Some(0));
    let mut r = csv::Reader::from_path(dir.path().join("out/rates.csv")).unwrap();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        // quadrature, empirical, se, transitions
        for col in 3..7 {
            assert_eq!(rec[col].parse::<f64>().unwrap(), 0.0);
        }
        rows += 1;
    }
    assert_eq!(rows, 6);
}

#[test]
fn unresolvable_spike_is_a_resolution_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), "[grid]\nn_t = 20\n[solver]\nepsilon_ladder = [0.1, 0.05]\npartitions = [4]\n", &["verify"]);
    assert_ne!(o.status.code(), Some(0));
    let err = stderr_json(&o);
    assert_eq!(err["error"]["kind"], "resolution");
    assert!(!dir.path().join("out").exists(), "failed runs write nothing");
}

#[test]
fn misspelled_key_names_the_nearest_valid_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), "[model.merton]\nsigmaa = [0.2, 0.3]\n", &["equilibrium"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr_json(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("sigmaa") && msg.contains("`sigma`"), "{msg}");
}

#[test]
fn expression_syntax_error_reports_offset() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), "[model]\npreset = \"tanh_switching\"\nsigma = [\"0.3 +\"]\n", &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr_json(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("model.sigma[0]") && msg.contains('^'), "{msg}");
}

#[test]
fn non_convergence_exits_with_four_and_history() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), "[grid]\nn_t = 16\nn_x = 21\n[solver]\nmax_sweeps = 1\ntol = 1e-14\n", &["equilibrium"]);
    assert_eq!(o.status.code(), Some(4));
    let err = stderr_json(&o);
    assert_eq!(err["error"]["kind"], "non_convergence");
    assert!(err["error"]["history"].as_array().is_some());
}

#[test]
fn dry_run_prints_a_plan_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["simulate", "rates", "partition-solve", "equilibrium", "merton", "verify"] {
        let o = regime(dir.path(), SMALL_MERTON, &[cmd, "--dry-run"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        let s = stdout_json(&o);
        assert_eq!(s["status"], "dry_run");
        assert!(!s["plan"].as_array().unwrap().is_empty());
    }
    assert!(!dir.path().join("out").exists());
    let bad = regime(dir.path(), "[grid]\nn_x = 2\n", &["equilibrium", "--dry-run"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\npreset = \"frozen\"\n[rates]\npaths = 10\n").unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_regime"))
        .args(["rates", "--config"])
        .arg(&cfg)
        .env("REGIME_OUTPUT_DIR", &target)
        .env("REGIME_WORKERS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("manifest.json").exists());
    let o = Command::new(env!("CARGO_BIN_EXE_regime"))
        .args(["rates", "--dry-run", "--config"])
        .arg(&cfg)
        .env("REGIME_WORKERS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn merton_variants_write_phi_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), SMALL_MERTON, &["merton", "pre"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out");
    let phi = std::fs::read_to_string(out.join("phi.csv")).unwrap();
    assert!(phi.starts_with("tau,s,i,phi\n"));
    let cmp: Value = serde_json::from_slice(&std::fs::read(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["variant"], "pre");
    assert!(cmp["pde_max_relative_error"].as_f64().unwrap() < 0.05);
    // anchor-dependent weights have no time-consistent form
    let o = regime(dir.path(), SMALL_MERTON, &["merton", "tc"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn partition_solve_writes_the_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = regime(dir.path(), "[grid]\nn_t = 16\nn_x = 41\n[solver]\npartitions = [2, 4, 8]\n", &["partition-solve"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/convergence.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let d: Vec<f64> = rows.iter().map(|r| r["sup_diff_theta"].as_f64().unwrap()).collect();
    assert!(d[2] < d[1] && d[1] < d[0], "{d:?}");
}
