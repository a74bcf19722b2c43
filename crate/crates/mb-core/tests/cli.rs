//! End-to-end tests of the `mb` binary: exit codes, JSON/CSV output,
//! manifest sidecars, and byte-level reproducibility.

use mb_core::report::sha256_file;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mb-cli-{tag}-{}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn mb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mb"))
        .args(args)
        .env_remove("MB_PRECISION_BITS")
        .output()
        .expect("binary runs")
}

fn write_spec(dir: &Path) -> PathBuf {
    let path = dir.join("spec.json");
    fs::write(&path, r#"{"a": 1.0, "b": 4.0, "theta": 1.0}"#).unwrap();
    path
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn constants_json_matches_closed_forms() {
    let dir = scratch("constants");
    let spec = write_spec(&dir);
    let out = mb(&["constants", "--spec", spec.to_str().unwrap(), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let c1 = v["c1"].as_f64().unwrap();
    assert!((c1 - 0.75f64.ln()).abs() < 1e-12, "c1 = {c1}");
    let ell = v["ell"].as_f64().unwrap();
    assert!((ell + 2.0 * 0.75f64.ln()).abs() < 1e-12, "ell = {ell}");
    assert!((v["c3"][0].as_f64().unwrap() + 0.25).abs() < 1e-12);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_spec_is_a_validation_error_naming_the_file() {
    let out = mb(&["eq", "--spec", "/nonexistent/nope.json"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nope.json"), "stderr: {stderr}");
    assert!(out.stdout.is_empty());
}

#[test]
fn unknown_flags_exit_one_and_help_exits_zero() {
    assert_eq!(mb(&["eq", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(mb(&["no-such-command"]).status.code(), Some(1));
    let help = mb(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["eq", "constants", "oracle", "fit", "sample", "clt", "rigidity", "report"] {
        assert!(text.contains(sub), "help misses {sub}");
    }
    assert_eq!(mb(&["--version"]).status.code(), Some(0));
}

#[test]
fn eq_grid_midpoint_hits_arcsine_density() {
    let dir = scratch("eq");
    let spec = write_spec(&dir);
    // a single midpoint lands on x = 2.5 where rho = 2/(3 pi) and cdf = 1/2
    let out = mb(&["eq", "--spec", spec.to_str().unwrap(), "--grid", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x,rho,cdf,logpot,re_i1plus,im_i1plus"
    );
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect();
    assert_eq!(row[0], 2.5);
    assert!((row[1] - 2.0 / (3.0 * std::f64::consts::PI)).abs() < 1e-10);
    assert!((row[2] - 0.5).abs() < 1e-10);
    assert!((row[4].hypot(row[5]) - 3.0).abs() < 1e-10);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn oracle_sweep_is_reproducible_and_manifested() {
    let dir = scratch("oracle");
    let spec = write_spec(&dir);
    let first = dir.join("dets-a.csv");
    let second = dir.join("dets-b.csv");
    for out_path in [&first, &second] {
        let out = mb(&[
            "oracle",
            "--spec",
            spec.to_str().unwrap(),
            "--nmin",
            "1",
            "--nmax",
            "6",
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let bytes_a = fs::read(&first).unwrap();
    assert_eq!(bytes_a, fs::read(&second).unwrap(), "sweep is not deterministic");

    // D_1 = integral of 1 over [1,4] = 3
    let text = String::from_utf8_lossy(&bytes_a);
    let row1 = text.lines().nth(1).unwrap();
    let log_abs: f64 = row1.split(',').nth(1).unwrap().parse().unwrap();
    assert!((log_abs - 3f64.ln()).abs() < 1e-14, "row: {row1}");

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("dets-a.csv.manifest.json")).unwrap())
            .unwrap();
    assert!(manifest["spec_sha256"].as_str().unwrap().len() == 64);
    assert!(manifest["finished_at"].as_str().is_some());
    assert_eq!(
        manifest["artifacts"][0]["sha256"].as_str().unwrap(),
        sha256_file(&first).unwrap()
    );
    assert_eq!(
        manifest["artifacts"][0]["bytes"].as_u64().unwrap(),
        bytes_a.len() as u64
    );
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn precision_env_var_controls_working_bits() {
    let dir = scratch("bits");
    let spec = write_spec(&dir);
    let out = Command::new(env!("CARGO_BIN_EXE_mb"))
        .args(["oracle", "--spec", spec.to_str().unwrap(), "--nmin", "1", "--nmax", "2"])
        .env("MB_PRECISION_BITS", "128")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().nth(1).unwrap().contains(",128,"), "{text}");

    let bad = Command::new(env!("CARGO_BIN_EXE_mb"))
        .args(["oracle", "--spec", spec.to_str().unwrap()])
        .env("MB_PRECISION_BITS", "12")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn fit_with_too_few_rows_is_a_numerical_error() {
    let dir = scratch("fit");
    let spec = write_spec(&dir);
    let dets = dir.join("dets.csv");
    let out = mb(&[
        "oracle",
        "--spec",
        spec.to_str().unwrap(),
        "--nmin",
        "1",
        "--nmax",
        "3",
        "--out",
        dets.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let out = mb(&["fit", "--dets", dets.to_str().unwrap(), "--spec", spec.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("records"), "stderr: {stderr}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn fit_over_a_real_sweep_passes_and_writes_json() {
    let dir = scratch("fitpass");
    let spec = write_spec(&dir);
    let dets = dir.join("dets.csv");
    let status = mb(&[
        "oracle",
        "--spec",
        spec.to_str().unwrap(),
        "--nmax",
        "10",
        "--out",
        dets.to_str().unwrap(),
    ]);
    assert_eq!(status.status.code(), Some(0));
    let json_out = dir.join("fit.json");
    let out = mb(&[
        "fit",
        "--dets",
        dets.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--json",
        json_out.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["pass"], serde_json::Value::Bool(true));
    assert_eq!(v["n_range"][0].as_u64(), Some(1));
    assert_eq!(v["n_range"][1].as_u64(), Some(10));
    let on_disk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(v, on_disk);
    assert!(dir.join("fit.json.manifest.json").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sample_then_rigidity_runs_and_clt_gates_on_small_budgets() {
    let dir = scratch("pipeline");
    let spec = write_spec(&dir);
    let samples = dir.join("samples.csv");
    let out = mb(&[
        "sample",
        "--spec",
        spec.to_str().unwrap(),
        "--n",
        "4",
        "--chains",
        "2",
        "--steps",
        "12000",
        "--burn-in",
        "2000",
        "--thin",
        "8",
        "--seed",
        "5",
        "--out",
        samples.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["chains"].as_u64(), Some(2));
    assert_eq!(summary["stored_configurations"].as_u64(), Some(2 * 1250));
    for rate in summary["acceptance_rates"].as_array().unwrap() {
        let r = rate.as_f64().unwrap();
        assert!(r > 0.0 && r <= 1.0);
    }
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.join("samples.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([5, 6]));

    // 2500 stored configurations cannot reach the pooled-ESS gate
    let clt = mb(&[
        "clt",
        "--samples",
        samples.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--t",
        "2.5",
    ]);
    assert_eq!(clt.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&clt.stderr);
    assert!(stderr.contains("effective sample size"), "stderr: {stderr}");

    // rigidity has no sample-size gate and reports finite statistics
    let rig = mb(&[
        "rigidity",
        "--samples",
        samples.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
    ]);
    assert_eq!(rig.status.code(), Some(0), "{}", String::from_utf8_lossy(&rig.stderr));
    let v = stdout_json(&rig);
    assert_eq!(v["n"].as_u64(), Some(4));
    assert_eq!(v["configurations"].as_u64(), Some(2500));
    assert!(v["median_sup"].as_f64().unwrap() > 0.0);
    assert!(v["sup_violation_frequency"].as_f64().unwrap() <= 1.0);

    // out-of-range margins are rejected up front
    let bad = mb(&[
        "rigidity",
        "--samples",
        samples.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--delta",
        "2.0",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sample_rejects_signed_weights() {
    let dir = scratch("signed");
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"a": 1.0, "b": 4.0, "theta": 1.0,
            "singularities": [{"t": 2.5, "alpha": [0.0, 0.0], "beta": [0.2, 0.0]}]}"#,
    )
    .unwrap();
    let out = mb(&[
        "sample",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.join("s.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("positive base weight"), "stderr: {stderr}");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn report_bundle_passes_all_checks_without_sampling() {
    let dir = scratch("report");
    let spec = write_spec(&dir);
    let bundle_path = dir.join("report.json");
    let out = mb(&[
        "report",
        "--spec",
        spec.to_str().unwrap(),
        "--nmin",
        "8",
        "--nmax",
        "13",
        "--chains",
        "0",
        "--out",
        bundle_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS theta1_closed_forms"), "{text}");
    assert!(text.contains("PASS fit_within_tolerance"), "{text}");
    assert!(!text.contains("FAIL"), "{text}");

    let bundle: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&bundle_path).unwrap()).unwrap();
    assert_eq!(bundle["determinants"].as_array().unwrap().len(), 6);
    assert!(bundle["kappa"].is_object());
    assert!(bundle["clt"].is_null());
    for check in bundle["checks"].as_array().unwrap() {
        assert_eq!(check["pass"], serde_json::Value::Bool(true), "{check}");
    }
    assert!(dir.join("report.json.manifest.json").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn beta_outside_equilibrium_window_exits_one_from_report() {
    let dir = scratch("window");
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"a": 1.0, "b": 4.0, "theta": 1.0,
            "singularities": [{"t": 2.5, "alpha": [0.0, 0.0], "beta": [0.3, 0.0]}]}"#,
    )
    .unwrap();
    let out = mb(&["report", "--spec", spec.to_str().unwrap(), "--chains", "0"]);
    assert_eq!(out.status.code(), Some(1));
    fs::remove_dir_all(&dir).unwrap();
}
