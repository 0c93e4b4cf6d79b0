use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_floquet-gerbe"))
}

fn run(cmd: &str, config: &Value, dir: &Path) -> i32 {
    let cfg = dir.join(format!("{cmd}.json"));
    fs::write(&cfg, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let out = bin()
        .args([cmd, "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap(), "--workers", "2"])
        .output()
        .unwrap();
    out.status.code().unwrap()
}

fn kicked(omega0: f64) -> Value {
    json!({"kind": "kicked-two-level", "omega0": omega0, "omega1": 1.0})
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn reference_schedule(kicks: usize) -> Value {
    json!({
        "kind": "linear",
        "kicks": kicks,
        "lambda_end": 4.0 * PI,
        "charts": [0, 1, 2, 0],
        "transitions": [PI / 2.0, 5.0 * PI / 2.0, 3.5 * PI]
    })
}

#[test]
fn quasienergy_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"model": kicked(1.0), "sweep": {"frequency_ratios": [1.0, 0.5], "lambda_samples": 512, "lambda_max": 4.0 * PI}});
    assert_eq!(run("quasienergies", &cfg, dir.path()), 0);
    let csv = fs::read_to_string(dir.path().join("out/quasienergies.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "omega0_over_omega1,lambda,branch,chi_mod_omega0,chart");
    assert!(!csv.contains('\r'));
    let mut checked = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (ratio, lambda, branch, chi): (f64, f64, usize, f64) =
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
        if ratio == 1.0 && branch == 0 {
            let expected = (lambda / (4.0 * PI)).rem_euclid(1.0);
            let d = (chi - expected).abs();
            assert!(d.min(1.0 - d) < 1e-8, "λ = {lambda}: {chi} vs {expected}");
            checked += 1;
        }
    }
    assert_eq!(checked, 513);
    let crossings = fs::read_to_string(dir.path().join("out/crossings.csv")).unwrap();
    let lambdas: Vec<f64> = crossings.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(lambdas.len(), 3);
    for l in lambdas {
        let r = l.rem_euclid(2.0 * PI);
        assert!(r.min(2.0 * PI - r) < 1e-9);
    }
}

#[test]
fn empty_ratio_list_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"model": kicked(1.0), "sweep": {"frequency_ratios": [], "lambda_samples": 64, "lambda_max": 1.0}});
    assert_eq!(run("quasienergies", &cfg, dir.path()), 0);
    let csv = fs::read_to_string(dir.path().join("out/quasienergies.csv")).unwrap();
    assert_eq!(csv, "omega0_over_omega1,lambda,branch,chi_mod_omega0,chart\n");
}

#[test]
fn anholonomy_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("anholonomy", &json!({"model": kicked(1.0)}), dir.path()), 0);
    let r = read_json(&dir.path().join("out/anholonomy.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["verdict"], "anholonomic, period 4π, ν = 1");
    assert_eq!(r["loop_2pi"]["permutation"], json!([1, 0]));
    assert_eq!(r["loop_4pi"]["block_shifts"], json!([1, 1]));

    let off = json!({"model": {"kind": "kicked-two-level", "omega0": 1.0, "omega1": 1.0, "kick_scale": 0.0}});
    assert_eq!(run("anholonomy", &off, dir.path()), 0);
    let r = read_json(&dir.path().join("out/anholonomy.json"));
    assert_eq!(r["nu"], 0);
    assert!(r["verdict"].as_str().unwrap().starts_with("trivial"));

    assert_eq!(run("anholonomy", &json!({"model": kicked(0.45)}), dir.path()), 0);
    let r = read_json(&dir.path().join("out/anholonomy.json"));
    assert_eq!(r["anholonomic"], true);
}

#[test]
fn holonomy_report_fields_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"model": kicked(1.0), "schedule": reference_schedule(64)});
    assert_eq!(run("holonomy", &cfg, dir.path()), 0);
    let first = fs::read(dir.path().join("out/holonomy.json")).unwrap();
    let csv1 = fs::read(dir.path().join("out/holonomy_integrand.csv")).unwrap();
    let r: Value = serde_json::from_slice(&first).unwrap();
    let h = &r["holonomy"];
    assert!(h["phase"]["re"].is_number());
    assert!(h["reference_target"]["re"].is_number());
    assert!(h["oracle"]["fidelity"].as_f64().unwrap() > 0.999);
    assert!(h["note"].as_str().unwrap().contains("eta_0"));
    assert_eq!(h["edge_terms"].as_array().unwrap().len(), 3);

    assert_eq!(run("holonomy", &cfg, dir.path()), 0);
    assert_eq!(first, fs::read(dir.path().join("out/holonomy.json")).unwrap());
    assert_eq!(csv1, fs::read(dir.path().join("out/holonomy_integrand.csv")).unwrap());
}

#[test]
fn constant_schedule_matches_floquet_geometric_phase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "model": kicked(1.0),
        "grids": {"n_theta": 1024, "n_lambda": 256, "n_t": 512},
        "schedule": {"kind": "constant", "kicks": 9, "lambda_start": 1.3, "charts": [0]}
    });
    assert_eq!(run("holonomy", &cfg, dir.path()), 0);
    let r = read_json(&dir.path().join("out/holonomy.json"));
    assert!(r["moore_stedman"]["difference"].as_f64().unwrap() < 1e-8);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut schedule = reference_schedule(64);
    schedule["transitions"] = json!([PI / 2.0, 5.0 * PI / 2.0]);
    let cfg = json!({"model": kicked(1.0), "schedule": schedule});
    let path = dir.path().join("c.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = bin().args(["holonomy", "--config", path.to_str().unwrap(), "--out", "/nonexistent"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(2, 0)"));

    assert_eq!(run("verify", &json!({"model": kicked(1.0), "unknown": 1}), dir.path()), 2);
    assert_eq!(
        run("verify", &json!({"model": kicked(1.0), "grids": {"n_theta": 32, "n_lambda": 256, "n_t": 512}}), dir.path()),
        2
    );
    assert_eq!(run("holonomy", &json!({"model": kicked(1.0)}), dir.path()), 2);
}

#[test]
fn verify_passes_and_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let base = json!({"model": kicked(1.0), "schedule": reference_schedule(64), "verify": {"gauge_samples": 3, "gluing_tol": 2e-5}});
    assert_eq!(run("verify", &base, dir.path()), 0);
    let r = read_json(&dir.path().join("out/verify.json"));
    assert_eq!(r["passed"], true);

    let mut bad = base.clone();
    bad["verify"]["corrupt_phi"] = json!(0.25);
    assert_eq!(run("verify", &bad, dir.path()), 1);
    let r = read_json(&dir.path().join("out/verify.json"));
    let cocycle = r["suites"].as_array().unwrap().iter().find(|s| s["name"] == "cocycle").unwrap();
    assert_eq!(cocycle["passed"], false);
    assert!((cocycle["residual"].as_f64().unwrap() - 0.25).abs() < 0.05);
}

#[test]
fn refinement_table_is_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"model": kicked(1.0), "verify": {"refinement": true, "gauge_samples": 1, "gluing_tol": 2e-5}});
    assert_eq!(run("verify", &cfg, dir.path()), 0);
    let r = read_json(&dir.path().join("out/verify.json"));
    let order = r["refinement_order"].as_f64().unwrap();
    assert!((order - 2.0).abs() < 0.2, "{order}");
    let csv = fs::read_to_string(dir.path().join("out/refinement.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
