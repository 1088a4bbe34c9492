use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use phonon_forge::model::{calibrate, ModelInputs};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_phonon-forge"));
    c.env_remove("PHONON_FORGE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| {
        panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn sidecar(dir: &Path, preset: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(format!("{preset}.json"))).unwrap()).unwrap()
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn fig6_preset_writes_one_row_per_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", "--preset", "fig6", "--m-max", "10", "--output-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("fig6.csv")).unwrap();
    assert!(csv.starts_with("# fig6"), "{csv}");
    assert!(csv.contains("omega_m = 1"));
    assert_eq!(data_rows(&csv).len(), 10);
    let side = sidecar(dir.path(), "fig6");
    assert_eq!(side["rows"], 10);
    assert_eq!(side["config"]["sweep"]["m_max"], 10);
}

#[test]
fn calibrate_prints_derived_parameters_and_checks() {
    let out = run(&["calibrate", "--targets", "5,5"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = calibrate(&ModelInputs {
        targets: [5, 5],
        ..Default::default()
    })
    .unwrap();
    for n in 0..2 {
        assert_eq!(v["eta"][n].as_f64().unwrap(), p.eta[n]);
        assert_eq!(v["omega_drive"][n].as_f64().unwrap(), p.omega_drive[n]);
        assert_eq!(v["delta"][n].as_f64().unwrap(), p.delta[n]);
    }
    let checks = v["checks"].as_array().unwrap();
    assert_eq!(checks.len(), p.checks().len());
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn calibrate_reports_violated_regime_with_config_exit_code() {
    // kappa comparable to the sideband spacing breaks resolved sidebands
    let out = run(&["calibrate", "--kappa", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["checks"].as_array().unwrap().iter().any(|c| c["passed"] == false));
    assert_eq!(stderr_json(&out)["error"]["kind"], "calibration");
}

#[test]
fn validate_runs_fixture_suite() {
    let out = run(&["validate"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["laguerre_root_m1", "bell_negativity", "vacuum_wln"] {
        assert!(text.lines().any(|l| l.starts_with("PASS") && l.contains(name)), "{text}");
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn misspelled_key_is_a_config_error_with_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "[model]\ngamm = 0.1\n").unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "steady"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["exit_code"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("gamma"));

    let out = run(&["steady", "--set", "d_m=lots"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("positive integer"));
}

#[test]
fn flags_override_file_and_config_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# single phonon per mode\n[model]\ntheta = 0.5\ntargets = 1, 1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "steady",
        "--theta",
        "0.9",
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let side = sidecar(&out_dir, "steady");
    assert_eq!(side["config"]["model"]["theta"], 0.9);
    assert_eq!(side["params"]["theta"], 0.9);
    let csv = fs::read_to_string(out_dir.join("steady.csv")).unwrap();
    assert!(data_rows(&csv)[0].starts_with("1,1,9.00000000000e-1,IR,"), "{csv}");
}

#[test]
fn identical_configs_give_byte_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(&["sweep", "--preset", "fig2a", "--m-max", "2", "--output-dir", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ca = fs::read(a.path().join("fig2a.csv")).unwrap();
    let cb = fs::read(b.path().join("fig2a.csv")).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(data_rows(std::str::from_utf8(&ca).unwrap()).len(), 4);
}

#[test]
fn non_convergence_exits_with_solver_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "steady",
        "--set",
        "first_checkpoint=10",
        "--set",
        "max_time=20",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_json(&out)["error"]["kind"], "solver");
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let target = blocker.join("out");
    let out = run(&["sweep", "--preset", "fig6", "--output-dir", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"]["kind"], "io");
}

#[test]
fn thread_count_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--preset", "fig6", "--output-dir", dir.path().to_str().unwrap()])
        .env("PHONON_FORGE_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(sidecar(dir.path(), "fig6")["config"]["threads"], 2);

    let out = bin()
        .args(["sweep", "--preset", "fig6", "--threads", "1", "--output-dir", dir.path().to_str().unwrap()])
        .env("PHONON_FORGE_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(sidecar(dir.path(), "fig6")["config"]["threads"], 1);
}

#[test]
fn sweep_without_preset_is_a_config_error() {
    let out = run(&["sweep"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["error"]["message"].as_str().unwrap().contains("preset"));
}

#[test]
fn evolve_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "evolve",
        "--t-final",
        "2000",
        "--dt-out",
        "500",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("evolve.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("0.00000000000e0,0.00000000000e0,1.00000000000e0"), "{csv}");
    let side = sidecar(dir.path(), "evolve");
    assert!(side["max_trace_error"].as_f64().unwrap() < 1e-6);
}
