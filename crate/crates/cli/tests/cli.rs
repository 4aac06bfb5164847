use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hw_core::sweep::Family;

fn hw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hw"))
        .args(args)
        .output()
        .expect("spawn hw")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn family_spec(dir: &Path, fam: Family, params: &[f64]) -> PathBuf {
    let p = fam.problem(params).unwrap();
    let path = dir.join(format!("{}_{:?}.json", fam.name(), params));
    fs::write(&path, serde_json::to_string(&p).unwrap()).unwrap();
    path
}

fn raw_spec(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn status_of(out: &Output) -> String {
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("verdict json");
    v["status"].as_str().unwrap().to_string()
}

#[test]
fn fss_writes_table_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_spec(dir.path(), Family::Power, &[0.0, 3.0]);
    let out_dir = dir.path().join("out");
    let out = hw(&[
        "fss",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("fss.csv")).unwrap();
    assert!(table.starts_with("n,log_r,log_u,log_v,u,v"));
    assert!(table.lines().count() > 100);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("validation.json")).unwrap()).unwrap();
    assert!(report.is_object());
}

#[test]
fn zero_coefficient_is_rejected_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let spec = raw_spec(
        dir.path(),
        "r0.json",
        r#"{"r":{"family":"tabulated","start":0,"values":[1,1,0,1,1,1]},"n0":1}"#,
    );
    let out = hw(&["fss", "--spec", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
}

#[test]
fn malformed_and_missing_specs_give_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = raw_spec(dir.path(), "bad.json", "{ not json");
    assert_eq!(code(&hw(&["classify", "--spec", bad.to_str().unwrap()])), 3);
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&hw(&["diagnose", "--spec", missing.to_str().unwrap()])), 3);
}

#[test]
fn classify_exit_codes_follow_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let solvable = family_spec(dir.path(), Family::Exponential, &[-2.0]);
    let out = hw(&["classify", "--spec", solvable.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(status_of(&out), "SolvableAndEquivalent");

    let open = family_spec(dir.path(), Family::Exponential, &[-0.3]);
    let out = hw(&["classify", "--spec", open.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert_eq!(status_of(&out), "Indeterminate");

    let not = family_spec(dir.path(), Family::Power, &[1.0, 0.9]);
    let out = hw(&["classify", "--spec", not.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(status_of(&out), "NotSolvable");
}

#[test]
fn diagnose_reports_series() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_spec(dir.path(), Family::Power, &[0.5, 2.0]);
    let out = hw(&["diagnose", "--spec", spec.to_str().unwrap(), "--horizon", "2000"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["horizon"], 2000);
    assert!(v["j"]["verdict"].is_string());
}

#[test]
fn construct_refuses_without_narrow_solvability() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_spec(dir.path(), Family::Exponential, &[-0.75]);
    let out = hw(&["construct", "--spec", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 5);
}

#[test]
fn construct_writes_solution_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_spec(dir.path(), Family::Exponential, &[-2.0]);
    let out_dir = dir.path().join("c");
    let out = hw(&[
        "construct",
        "--spec",
        spec.to_str().unwrap(),
        "--horizon",
        "1000",
        "--out",
        out_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("construction.csv")).unwrap();
    assert!(table.starts_with("n,beta_re,beta_im,mu_re,mu_im,u_tilde,v_tilde"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("asymptotics.json")).unwrap()).unwrap();
    let a = &report["asymptotics"];
    assert!(a["ratio_u_final_quarter"].as_f64().unwrap() <= 1e-3);
    assert!(a["perturbed_residual"].as_f64().unwrap() <= 1e-10);
    assert!(a["norm_probe"].as_f64().unwrap() <= 0.5);
}

#[test]
fn sweep_grid_flag_builds_cartesian_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("s");
    let out = hw(&[
        "sweep",
        "--family",
        "power",
        "--grid",
        "alpha=0:0.5:0.5",
        "--grid",
        "beta=2.5:3:0.5",
        "--horizon",
        "2000",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let out = hw(&["sweep", "--family", "power", "--grid", "gamma=0:1:0.5"]);
    assert_eq!(code(&out), 3);
    let out = hw(&["sweep", "--family", "bessel"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn reproduce_exponential_passes() {
    let out = hw(&["reproduce", "exponential"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn log_level_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = family_spec(dir.path(), Family::Exponential, &[-2.0]);
    let out = Command::new(env!("CARGO_BIN_EXE_hw"))
        .args(["classify", "--spec", spec.to_str().unwrap()])
        .env("HW_LOG", "info")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("loaded"));
}
