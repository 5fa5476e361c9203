mod common;

use common::{artifacts, data, degctl};
use serde_json::Value;
use tempfile::tempdir;

fn json(path: &std::path::Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn minimal_solve_matches_golden_summary() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["solve"], "minimal.json", dir.path()), 0);
    let produced = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let golden = std::fs::read_to_string(data("golden/minimal_summary.json")).unwrap();
    assert_eq!(produced, golden);
    let s: Value = serde_json::from_str(&produced).unwrap();
    assert!(s["mass"]["max_relative_drift"].as_f64().unwrap() < 1e-12);
    assert!((s["norms"]["min"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((s["norms"]["max"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn uniform_mode_summary_matches_closed_form() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["solve"], "uniform.json", dir.path()), 0);
    let s = json(&dir.path().join("summary.json"));
    let u = &s["uniform_mode"];
    let expected = 2.0 * (1.0 - 0.75 / 64.0_f64).powi(-64);
    assert!((u["closed_form"].as_f64().unwrap() - expected).abs() < 1e-12 * expected);
    assert!(u["relative_deviation"].as_f64().unwrap() < 1e-12);
    assert!((s["norms"]["sup"].as_f64().unwrap() - expected).abs() < 1e-12 * expected);
    assert_eq!(s["bounds"]["within_sup_bound"], true);
}

#[test]
fn state_csv_has_provenance_header() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["solve"], "minimal.json", dir.path()), 0);
    let csv = std::fs::read_to_string(dir.path().join("state.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# degctl 0.1.0 degenerate-control 0.1.0 config_sha256="));
    assert_eq!(lines.next().unwrap(), "t,x,value");
    // 33 time levels x 17 nodes
    assert_eq!(lines.count(), 33 * 17);
}

#[test]
fn guard_violation_is_a_config_error() {
    let dir = tempdir().unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_degctl"))
        .args(["solve", "--config"])
        .arg(data("guard.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("guard") && msg.contains("1 * 1"), "{msg}");
}

#[test]
fn missing_or_malformed_config_is_a_config_error() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["solve"], "does_not_exist.json", dir.path()), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"problem": {"horizon": 1.0}}"#).unwrap();
    let code = std::process::Command::new(env!("CARGO_BIN_EXE_degctl"))
        .args(["solve", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap()
        .status
        .code();
    assert_eq!(code, Some(2));
}

#[test]
fn overflow_is_a_solver_failure() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["solve"], "overflow.json", dir.path()), 3);
}

#[test]
fn planted_target_converges_and_certifies() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["optimize", "--dump-trajectories"], "planted.json", dir.path()), 0);
    let c = json(&dir.path().join("certification.json"));
    assert_eq!(c["converged"], true);
    assert_eq!(c["certified"], true);
    assert!(c["final_residual"].as_f64().unwrap() < 1e-8);
    assert_eq!(c["certification"]["trichotomy"]["violations"], 0);
    let files = artifacts(dir.path());
    for name in ["iterations.csv", "control.csv", "state.csv", "adjoint.csv", "certification.json"] {
        assert!(files.contains_key(name), "missing {name}");
    }
}

#[test]
fn alpha_below_threshold_is_flagged_not_fatal() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["sweep", "--sweep", "alpha=5"], "planted.json", dir.path()), 0);
    let s = json(&dir.path().join("sweep.json"));
    let row = &s["rows"][0];
    assert_eq!(row["status"], "ok");
    assert!(row["delta"].as_f64().unwrap() < 0.0);
}

#[test]
fn zero_budget_exits_non_converged_with_artifacts() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["optimize"], "budget.json", dir.path()), 4);
    let c = json(&dir.path().join("certification.json"));
    assert_eq!(c["converged"], false);
    assert_eq!(c["iterations"], 0);
    assert!(c["final_residual"].as_f64().unwrap() > 0.0);
    assert!(c["certification"].is_null());
}

#[test]
fn verify_suites_pass_on_default_problem() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["verify", "--suite", "all"], "verify.json", dir.path()), 0);
    let r = json(&dir.path().join("verify.json"));
    assert_eq!(r["passed"], true);
    let names: Vec<&str> = r["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"gradient_zero_direction"));
    assert!(names.contains(&"convergence"));
}

#[test]
fn consistent_mass_positivity_fails_with_witness() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["verify", "--suite", "max_principle"], "corrupted.json", dir.path()), 5);
    let r = json(&dir.path().join("verify.json"));
    let w = &r["checks"][0]["report"]["witness"];
    assert_eq!(w["kind"], "positivity");
    assert!(w["value"].as_f64().unwrap() < -1e-12);
}

#[test]
fn unknown_suite_is_a_config_error() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["verify", "--suite", "nonsense"], "verify.json", dir.path()), 2);
}

#[test]
fn sweep_across_threshold() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["sweep", "--sweep", "alpha=5,15,30"], "planted.json", dir.path()), 0);
    let s = json(&dir.path().join("sweep.json"));
    let deltas: Vec<f64> = s["rows"].as_array().unwrap().iter().map(|r| r["delta"].as_f64().unwrap()).collect();
    assert!(deltas[0] < 0.0 && deltas[1] > 0.0 && deltas[2] > 0.0);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "alpha,status,converged,iterations,cost,residual,ssc_threshold,delta,gamma_hat");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn mesh_sweep_costs_converge() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["sweep", "--sweep", "n_cells=16,32,64"], "planted.json", dir.path()), 0);
    let s = json(&dir.path().join("sweep.json"));
    let costs: Vec<f64> = s["rows"].as_array().unwrap().iter().map(|r| r["cost"].as_f64().unwrap()).collect();
    let (d1, d2) = ((costs[1] - costs[0]).abs(), (costs[2] - costs[1]).abs());
    assert!(d2 < d1, "{costs:?}");
}

#[test]
fn empty_sweep_is_a_config_error() {
    let dir = tempdir().unwrap();
    assert_eq!(degctl(&["sweep", "--sweep", "alpha="], "planted.json", dir.path()), 2);
    assert_eq!(degctl(&["sweep", "--sweep", "gamma=1"], "planted.json", dir.path()), 2);
}

#[test]
fn seed_changes_random_start_only_through_the_seed() {
    let (a, b, c) = (tempdir().unwrap(), tempdir().unwrap(), tempdir().unwrap());
    assert_eq!(degctl(&["optimize", "--seed", "3"], "planted.json", a.path()), 0);
    assert_eq!(degctl(&["optimize", "--seed", "3"], "planted.json", b.path()), 0);
    assert_eq!(degctl(&["optimize", "--seed", "4"], "planted.json", c.path()), 0);
    assert_eq!(artifacts(a.path()), artifacts(b.path()));
    assert_ne!(artifacts(a.path())["iterations.csv"], artifacts(c.path())["iterations.csv"]);
}
