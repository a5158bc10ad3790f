use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use eplb::checkpoint;
use eplb::error::Error;
use eplb::study::{emit_plotdata, Table};

fn eplb() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eplb"));
    c.env_remove("EPLB_OUT").env("RUST_LOG", "warn");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !matches!(out.status.code(), Some(0 | 1)) {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn affine_burgers() -> Value {
    json!({
        "grid": {"half_length": 2.0, "cells": 16},
        "flow": {
            "ion": {"a": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
            "electron": {"a": [[0.5, 0.1, 0], [0, 0.5, 0], [0, 0, 0.5]], "b": [0.1, 0, 0]}
        }
    })
}

fn small_decay() -> Value {
    json!({
        "grid": {"half_length": 3.0, "cells": 24},
        "flow": {
            "ion": {"a": [[0.25, 0, 0], [0, 0.25, 0], [0, 0, 0.25]]},
            "electron": {"a": [[0.2, 0, 0], [0, 0.2, 0], [0, 0, 0.2]]}
        },
        "density": {
            "ion": {"kind": "sound-speed-bump", "amplitude": 0.1, "width": 1.0},
            "electron": {"kind": "sound-speed-bump", "amplitude": 0.08, "width": 0.9}
        },
        "t_final": 0.6,
        "checkpoint_every": 3,
        "solver": {"record_every": 2}
    })
}

#[test]
fn passing_study_exits_zero_and_writes_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "b.json", &affine_burgers());
    let out = run(eplb().args(["burgers-check", "--config"]).arg(&cfg).arg("--out").arg(tmp.path().join("o")).args(["--threads", "1"]));
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS burgers-exactness")), "{stdout}");
    let s = summary(&tmp.path().join("o/burgers-check"));
    assert_eq!(s["status"], "pass");
    assert_eq!(s["exit_code"], 0);
    // the summary carries the resolved config, defaults filled in
    assert_eq!(s["config"]["kind"], "burgers-check");
    assert_eq!(s["config"]["times"], json!([0.0, 1.0, 5.0, 20.0]));
    assert_eq!(s["config"]["grid"]["cells"], 16);
    let config_json: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/burgers-check/config.json")).unwrap()).unwrap();
    assert_eq!(config_json, s["config"]);
}

#[test]
fn failing_criterion_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = affine_burgers();
    // a decay window too short for the asymptotic slope
    cfg["flow"]["electron"] = json!({
        "a": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
        "perturbation": {"profile": "bump-sine", "amplitude": 0.1}
    });
    cfg["decay_window"] = json!([0.0, 0.5]);
    cfg["decay_samples"] = json!(6);
    let path = write_config(tmp.path(), "b.json", &cfg);
    let out = run(eplb().args(["burgers-check", "--config"]).arg(&path).arg("--out").arg(tmp.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL burgers-decay-hessian-inf-electron"));
    assert_eq!(summary(&tmp.path().join("burgers-check"))["status"], "fail");
}

#[test]
fn invalid_input_exits_two_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("o");
    let mut bad = affine_burgers();
    bad["epsilonz"] = json!([0.1]);
    let path = write_config(tmp.path(), "bad.json", &bad);
    let out = run(eplb().args(["burgers-check", "--config"]).arg(&path).arg("--out").arg(&root));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilonz"));
    assert!(!root.exists());

    let good = write_config(tmp.path(), "good.json", &affine_burgers());
    let out = run(eplb().args(["bogus-kind", "--config"]).arg(&good).arg("--out").arg(&root));
    assert_eq!(out.status.code(), Some(2));
    // density and t_final missing for a PDE kind
    let out = run(eplb().args(["decay-study", "--config"]).arg(&good).arg("--out").arg(&root));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`density`") || String::from_utf8_lossy(&out.stderr).contains("`t_final`"));
    let out = run(eplb().args(["burgers-check", "--config"]).arg(tmp.path().join("absent.json")));
    assert_eq!(out.status.code(), Some(2));
    let out = run(eplb().args(["burgers-check", "--config"]).arg(&good).args(["--threads", "0"]).arg("--out").arg(&root));
    assert_eq!(out.status.code(), Some(2));
    assert!(!root.exists());
    let out = run(eplb().arg("--help"));
    assert_eq!(out.status.code(), Some(0));
    let out = run(&mut eplb());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_root_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = affine_burgers();
    cfg["output_dir"] = json!(tmp.path().join("from-config"));
    let path = write_config(tmp.path(), "b.json", &cfg);
    let env_root = tmp.path().join("from-env");
    let flag_root = tmp.path().join("from-flag");

    run(eplb().args(["burgers-check", "--config"]).arg(&path));
    assert!(tmp.path().join("from-config/burgers-check/summary.json").exists());

    run(eplb().env("EPLB_OUT", &env_root).args(["burgers-check", "--config"]).arg(&path));
    assert!(env_root.join("burgers-check/summary.json").exists());

    run(eplb().env("EPLB_OUT", tmp.path().join("unused")).args(["burgers-check", "--config"]).arg(&path).arg("--out").arg(&flag_root));
    assert!(flag_root.join("burgers-check/summary.json").exists());
    assert!(!tmp.path().join("unused").exists());
}

fn csv_and_checkpoint_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "eplb")) {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn decay_study_artifacts_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), "d.json", &small_decay());
    for root in ["a", "b"] {
        let out = run(eplb().args(["decay-study", "--config"]).arg(&path).arg("--out").arg(tmp.path().join(root)));
        assert!(matches!(out.status.code(), Some(0 | 1)));
    }
    let (a, b) = (tmp.path().join("a/decay-study"), tmp.path().join("b/decay-study"));
    let files = csv_and_checkpoint_files(&a);
    assert_eq!(files, csv_and_checkpoint_files(&b));
    assert!(files.iter().any(|f| f.ends_with("run/final.eplb")));
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{}", f.display());
        if f.extension().and_then(|e| e.to_str()) == Some("csv") {
            assert!(std::fs::read_to_string(a.join(f)).unwrap().starts_with("# eplb-csv v1\n"));
        }
    }

    // checkpoint cadence: every third record, numbered by record index
    let series = Table::from_csv("series", &std::fs::read_to_string(a.join("run/series.csv")).unwrap()).unwrap();
    let times = series.column("t").unwrap();
    let mut checkpoints: Vec<_> = files.iter().filter(|f| f.to_string_lossy().contains("checkpoint_")).collect();
    checkpoints.sort();
    let expected: Vec<usize> = (0..times.len()).step_by(3).collect();
    assert_eq!(checkpoints.len(), expected.len());
    for (f, i) in checkpoints.iter().zip(&expected) {
        assert!(f.ends_with(format!("run/checkpoint_{i:05}.eplb")), "{}", f.display());
        let (state, params) = checkpoint::load(a.join(f)).unwrap();
        assert_eq!(state.t, times[*i]);
        assert_eq!(params.epsilon, 1.0);
    }

    // plot tables with log columns
    let plot = Table::from_csv("p", &std::fs::read_to_string(a.join("plot/decay_electron_y.csv")).unwrap()).unwrap();
    assert_eq!(plot.columns, ["series", "t", "value", "log_1p_t", "log_value"]);
    let t = plot.column("t").unwrap();
    let v = plot.column("value").unwrap();
    let lt = plot.column("log_1p_t").unwrap();
    let lv = plot.column("log_value").unwrap();
    for k in 0..t.len() {
        assert!((lt[k] - (1.0 + t[k]).ln()).abs() < 1e-12);
        assert!((lv[k] - v[k].ln()).abs() < 1e-12);
    }
}

#[test]
fn plotdata_requires_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(emit_plotdata(tmp.path()), Err(Error::MissingArtifacts { .. })));
    let cfg = write_config(tmp.path(), "b.json", &affine_burgers());
    run(eplb().args(["burgers-check", "--config"]).arg(&cfg).arg("--out").arg(tmp.path()));
    let dir = tmp.path().join("burgers-check");
    let written = emit_plotdata(&dir).unwrap();
    assert!(written.iter().any(|p| p.ends_with("plot/burgers_exactness.csv")));
    std::fs::remove_file(dir.join("burgers_exactness.csv")).unwrap();
    match emit_plotdata(&dir) {
        Err(Error::MissingArtifacts { expected, .. }) => assert_eq!(expected, ["burgers_exactness.csv"]),
        other => panic!("expected missing artifacts, got {other:?}"),
    }
}

#[test]
fn epsilon_fit_lines_match_stored_fits() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(configs().join("epsilon_sweep.json")).unwrap()).unwrap();
    cfg["grid"]["cells"] = json!(24);
    cfg["epsilons"] = json!([0.4, 0.2, 0.1]);
    cfg["t_final"] = json!(0.2);
    let path = write_config(tmp.path(), "e.json", &cfg);
    let out = run(eplb().args(["epsilon-sweep", "--config"]).arg(&path).arg("--out").arg(tmp.path()));
    assert!(matches!(out.status.code(), Some(0 | 1)));
    let dir = tmp.path().join("epsilon-sweep");
    let s = summary(&dir);
    let fit = Table::from_csv("f", &std::fs::read_to_string(dir.join("plot/error_fit.csv")).unwrap()).unwrap();
    assert_eq!(fit.rows.len(), 4);
    for row in &fit.rows {
        let key = if row[0] == "electron_total" { "electron_total_order" } else { "ion_velocity_order" };
        let (slope, intercept) = (s["fits"][key]["slope"].as_f64().unwrap(), s["fits"][key]["intercept"].as_f64().unwrap());
        let eps: f64 = row[1].parse().unwrap();
        assert!(eps == 0.1 || eps == 0.4);
        let v: f64 = row[2].parse().unwrap();
        assert!((v - (intercept + slope * eps.ln()).exp()).abs() <= 1e-12 * v);
    }
    let errors = Table::from_csv("e", &std::fs::read_to_string(dir.join("errors.csv")).unwrap()).unwrap();
    assert_eq!(errors.column("epsilon").unwrap(), vec![0.4, 0.2, 0.1]);
}
