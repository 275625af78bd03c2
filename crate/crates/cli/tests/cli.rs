use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn dufm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dufm"))
        .args(args)
        .env("DUFM_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_train(steps: usize, log_every: usize, lr: f64) -> Value {
    serde_json::json!({
        "dims": { "widths": [6, 6, 6], "n": 4 },
        "reg": { "lambda_h1": 5e-3, "lambda_w": [5e-3, 5e-3, 5e-3] },
        "lr": lr,
        "steps": steps,
        "log_every": log_every,
        "seed": 3
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

#[test]
fn train_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_train(200, 50, 0.1));
    let out = tmp.path().join("run");
    let o = dufm(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "77"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 200 / 50 + 1);
    assert!(lines[0].starts_with("step,total,fit,reg_h1,reg_w_1,reg_w_2,reg_w_3,dnc1_pre_1"));
    assert!(lines[0].ends_with("dnc3_3"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 77);
    assert_eq!(manifest["config"]["seed"], 77);
    assert_eq!(manifest["regime"], "collapse");
    assert!(!out.join("params.json").exists());
}

#[test]
fn train_is_deterministic_and_saves_params() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small_train(60, 20, 0.1);
    c["save_params"] = Value::Bool(true);
    let cfg = write_config(tmp.path(), "c.json", &c);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        assert_eq!(dufm(&["train", "--config", &cfg, "--out", d.to_str().unwrap()]).status.code(), Some(0));
    }
    for f in ["metrics.csv", "params.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let params: dufm_core::model::ParamsFile =
        serde_json::from_str(&fs::read_to_string(a.join("params.json")).unwrap()).unwrap();
    let reg = dufm_core::RegConfig::uniform(3, 5e-3).unwrap();
    let total = dufm_core::model::loss(&params.matrices, &params.dims, &reg).unwrap().total;
    let last = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let logged: f64 = last.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((total - logged).abs() <= 1e-10 * logged);
}

#[test]
fn train_rejects_bad_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let neg = write_config(tmp.path(), "neg.json", &small_train(10, 5, -0.5));
    let o = dufm(&["train", "--config", &neg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lr"));

    let mut typo = small_train(10, 5, 0.1);
    typo["log_evry"] = Value::from(5);
    let typo = write_config(tmp.path(), "typo.json", &typo);
    let o = dufm(&["train", "--config", &typo, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("log_evry"));

    let o = dufm(&["train", "--config", "/nonexistent/c.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(dufm(&["train"]).status.code(), Some(1));
}

#[test]
fn divergence_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &small_train(100, 10, 500.0));
    let o = dufm(&["train", "--config", &cfg, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}

#[test]
fn optimum_reports() {
    let o = dufm(&["optimum", "--layers", "2", "--n", "1", "--lambda-h", "0.2", "--lambda-w", "0.2"]);
    assert_eq!(o.status.code(), Some(0));
    let r = stdout_json(&o);
    assert_eq!(r["regime"], "zero");
    assert_eq!(r["optimal_loss"], 0.5);

    let o = dufm(&["optimum", "--layers", "3", "--n", "50", "--lambda-h", "5e-4", "--lambda-w", "5e-4"]);
    let r = stdout_json(&o);
    assert_eq!(r["regime"], "collapse");
    assert!((r["threshold"].as_f64().unwrap() - 1.0 / 2916.0).abs() < 1e-16);

    // n·λ_H·λ_W² = 1/128 exactly
    let o = dufm(&["optimum", "--layers", "2", "--n", "2", "--lambda-h", "0.0625", "--lambda-w", "0.25"]);
    assert_eq!(stdout_json(&o)["regime"], "boundary");

    let o = dufm(&["optimum", "--layers", "3", "--n", "5", "--lambda-h", "1e-3", "--lambda-w", "1e-3,2e-3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_subcommand() {
    let o = dufm(&["verify", "--lemma", "counterexample"]);
    assert_eq!(o.status.code(), Some(0));
    let r = stdout_json(&o);
    assert!(r["passed"].as_bool().unwrap());
    assert!((r["details"]["nuclear"].as_f64().unwrap() - 3.464).abs() < 1e-3);
    assert!((r["details"]["nuclear_relu"].as_f64().unwrap() - 3.494).abs() < 1e-3);

    let o = dufm(&["verify", "--lemma", "key", "--trials", "2", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["convention"], "squared");

    assert_eq!(dufm(&["verify", "--lemma", "nope"]).status.code(), Some(1));
}

#[test]
fn verify_is_deterministic() {
    let run = || dufm(&["verify", "--lemma", "ridge", "--trials", "5", "--seed", "7"]).stdout;
    assert_eq!(run(), run());
}

#[test]
fn construct_certifies_collapse_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let cfg = configs().join("default.json");
    let o = dufm(&["construct", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["relative_gap"].as_f64().unwrap() < 1e-8);
    for layer in report["layers"].as_array().unwrap() {
        if layer["layer"].as_u64().unwrap() >= 2 {
            assert!(layer["dnc3"].as_f64().unwrap().abs() < 1e-8);
        }
    }
    assert!(out.join("params.json").exists());
}

#[test]
fn construct_rejects_zero_regime() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("zero_regime.json");
    let o = dufm(&["construct", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn ablate_writes_index() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "base": small_train(40, 20, 0.1),
        "sweep": { "width": [2, 6], "seed": [0, 1, 2] }
    });
    let cfg = write_config(tmp.path(), "a.json", &cfg);
    let out = tmp.path().join("sweep");
    let o = dufm(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let index = fs::read_to_string(out.join("index.csv")).unwrap();
    let lines: Vec<&str> = index.lines().collect();
    assert_eq!(lines[0], "run,width,seed,run_seed,final_loss,optimum_gap");
    assert_eq!(lines.len(), 1 + 6);
    for i in 0..6 {
        assert!(out.join(format!("run-{i}")).join("metrics.csv").exists());
    }

    let empty = serde_json::json!({ "base": small_train(40, 20, 0.1), "sweep": {} });
    let empty = write_config(tmp.path(), "e.json", &empty);
    let o = dufm(&["ablate", "--config", &empty, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
