use std::path::{Path, PathBuf};
use std::process::Command;

use delayscale::config::read_gains;
use delayscale::gains::GainSet;
use serde_json::{json, Value};

fn base_config() -> Value {
    json!({
        "example": {
            "theta": [0.5, -0.3, 0.4],
            "b": [0.2, -0.1, 0.15, 0.1, -0.2, 0.1, 0.2],
            "a": [1.0, 1.0],
            "bounds": {"a_upper": [1.0, 1.0], "a_lower": [1.0, 1.0], "b_upper": [0.2, 0.2, 0.2, 0.2, 0.2, 0.2, 0.2]},
            "delay": {"kind": "constant", "delta0": 0.3, "delta_bar": 0.1}
        },
        "envelope": {"sigma": 0.75},
        "seed": 7
    })
}

fn equilibrium_config() -> Value {
    let mut c = base_config();
    c["controller"] = json!({"pi_k": 1e-100});
    c["sim"] = json!({"x0": [0.0, 0.0, 0.0, 0.0], "psi0": [0.0, 0.0], "horizon": 0.2});
    c
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run(args: &[&str], out: &Path) -> i32 {
    run_with_env(args, out, &[])
}

fn run_with_env(args: &[&str], out: &Path, env: &[(&str, &str)]) -> i32 {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_delayscale"));
    cmd.args(args).arg("--out").arg(out);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let o = cmd.output().unwrap();
    o.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synthesize_certifies_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &base_config());
    assert_eq!(run(&["synthesize", "--config", p(&cfg)], dir.path()), 0);
    let cert: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["certified"], true);
    let gains = read_gains(&dir.path().join("gains.json")).unwrap();
    assert!(gains.observer_grid_margin > 0.0 && gains.controller_grid_margin > 0.0);

    // Simulating from the artifact uses exactly those gains.
    let mut c = equilibrium_config();
    c["gains"] = json!({"path": "gains.json"});
    let cfg2 = write_config(dir.path(), "c2.json", &c);
    let out = dir.path().join("sim");
    assert_eq!(run(&["simulate", "--config", p(&cfg2)], &out), 0);
    let text = std::fs::read_to_string(dir.path().join("gains.json")).unwrap();
    let again: GainSet = serde_json::from_str(&text).unwrap();
    assert_eq!(again, gains);
    assert_eq!(serde_json::to_string_pretty(&again).unwrap() + "\n", text);
}

#[test]
fn missing_sigma_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config();
    c["envelope"] = json!({});
    let cfg = write_config(dir.path(), "c.json", &c);
    for sub in ["synthesize", "simulate", "check"] {
        assert_eq!(run(&[sub, "--config", p(&cfg)], dir.path()), 1, "{sub}");
    }
    assert_eq!(run(&["synthesize", "--config", "/nonexistent.json"], dir.path()), 1);
}

#[test]
fn zero_gains_fail_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &base_config());
    assert_eq!(run(&["synthesize", "--config", p(&cfg)], dir.path()), 0);
    let zero = read_gains(&dir.path().join("gains.json")).unwrap().scaled(0.0);
    let mut c = base_config();
    c["gains"] = json!({"inline": zero});
    let cfg = write_config(dir.path(), "zero.json", &c);
    let out = dir.path().join("zero");
    assert_eq!(run(&["synthesize", "--config", p(&cfg)], &out), 2);
    assert!(!out.join("gains.json").exists());
}

#[test]
fn equilibrium_simulation_is_zero_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &equilibrium_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["simulate", "--config", p(&cfg)], &a), 0);
    assert_eq!(run(&["simulate", "--config", p(&cfg)], &b), 0);
    let csv_a = std::fs::read(a.join("trajectory.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("trajectory.csv")).unwrap());

    let (n, n_psi, rows) = delayscale::sim::read_csv(csv_a.as_slice()).unwrap();
    assert_eq!((n, n_psi, rows.len()), (4, 2, 201));
    assert!(rows.iter().all(|r| r.x.iter().chain(&r.psi).chain(&r.xhat).all(|v| *v == 0.0) && r.u == 0.0));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"]["kind"], "completed");

    // The monitor accepts the trajectory it just produced.
    assert_eq!(run(&["monitor", "--config", p(&cfg), "--trajectory", p(&a.join("trajectory.csv"))], &a), 0);
}

#[test]
fn halted_run_keeps_partial_csv_and_fails_checks() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base_config();
    c["feedback"] = json!({"flip_u_tilde": true});
    c["sim"] = json!({"x0": [0.5, -0.5, 0.5, -0.5], "psi0": [0.2, -0.2], "horizon": 0.2});
    let cfg = write_config(dir.path(), "c.json", &c);
    assert_eq!(run(&["simulate", "--config", p(&cfg)], dir.path()), 3);
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(text.lines().count() >= 1);

    c["monitor"] = json!({"trajectory": "trajectory.csv"});
    c["sampler"] = json!({"samples": 500, "x1_sweep": [-10.0, 10.0, 201], "delay_sweep_points": 201});
    let cfg = write_config(dir.path(), "check.json", &c);
    assert_eq!(run(&["check", "--config", p(&cfg)], dir.path()), 4);
}

#[test]
fn check_passes_on_defaults_and_catches_wrong_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &base_config());
    assert_eq!(run(&["check", "--config", p(&cfg)], dir.path()), 0);
    let mut c = base_config();
    c["envelope"]["sigma"] = json!(2.0);
    let cfg = write_config(dir.path(), "bad.json", &c);
    assert_eq!(run(&["check", "--config", p(&cfg)], dir.path()), 4);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verdict.json")).unwrap()).unwrap();
    let a1 = v["assumptions"]["margins"].as_array().unwrap().iter().find(|m| m["id"] == "A1").unwrap();
    assert_eq!(a1["passed"], false);
}

#[test]
fn sweep_runs_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &equilibrium_config());
    let code = run_with_env(
        &["simulate", "--config", p(&cfg), "--sweep", "example.delay.delta0:0.1:0.3:3"],
        dir.path(),
        &[("DELAYSCALE_THREADS", "2")],
    );
    assert_eq!(code, 0);
    let entries: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    let entries = entries.as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for (k, e) in entries.iter().enumerate() {
        assert_eq!(e["exit"], "ok");
        assert!(dir.path().join(format!("sweep_{k:03}")).join("trajectory.csv").is_file());
    }
    assert_eq!(run(&["simulate", "--config", p(&cfg), "--sweep", "bad"], dir.path()), 1);
}
