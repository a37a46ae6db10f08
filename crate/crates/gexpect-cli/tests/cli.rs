//! End-to-end tests of the binary: report shape, exit codes, and the
//! reproducibility contract (a report's embedded config replays to
//! byte-identical results).

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gexpect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gexpect"))
        .args(args)
        .env_remove("GEXPECT_SEED")
        .output()
        .expect("binary should run")
}

fn report_from(out: &Output) -> Value {
    assert!(
        !out.stdout.is_empty(),
        "no report on stdout; stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout should be a JSON report")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit normally")
}

#[test]
fn solve_reports_the_closed_form_value() {
    let out = gexpect(&[
        "solve",
        "--gen",
        "linear:mu=0.5",
        "--terminal",
        "y=1,z=2,u=0.2,v=0.8",
        "--t",
        "0",
    ]);
    assert_eq!(code(&out), 0);
    let report = report_from(&out);
    let value = &report["results"]["values"][0];
    assert!((value["deterministic"][0].as_f64().unwrap() - 1.6).abs() < 1e-12);
    assert!(
        value["stochastic"].is_null(),
        "t ≤ u has no stochastic part"
    );
    assert_eq!(report["tool"]["name"], "gexpect");
    assert_eq!(report["config"]["command"], "solve");
}

#[test]
fn zero_driver_preserves_constants_at_every_time() {
    let out = gexpect(&[
        "solve",
        "--gen",
        "zero",
        "--terminal",
        "y=3,z=0",
        "--t",
        "0,0.4,0.9",
    ]);
    assert_eq!(code(&out), 0);
    let report = report_from(&out);
    for value in report["results"]["values"].as_array().unwrap() {
        assert_eq!(value["deterministic"][0].as_f64().unwrap(), 3.0);
    }
}

#[test]
fn entropic_estimate_brackets_the_gaussian_value() {
    let out = gexpect(&[
        "solve",
        "--entropic",
        "nu=0.5",
        "--terminal",
        "y=0,z=1,u=0,v=1",
        "--mc-samples",
        "30000",
    ]);
    assert_eq!(code(&out), 0);
    let report = report_from(&out);
    let est = &report["results"]["entropic"];
    let (value, se) = (
        est["value"].as_f64().unwrap(),
        est["std_error"].as_f64().unwrap(),
    );
    assert!((value - 0.5).abs() < 4.0 * se, "{value} ± {se}");
    assert_eq!(est["dropped"], 0);
}

#[test]
fn recover_extracts_the_drift_driver_and_verifies_it() {
    let out = gexpect(&[
        "recover",
        "--oracle",
        "builtin:linear:mu=0.3",
        "--zmax",
        "2",
        "--verify",
        "--samples",
        "40",
        "--grid-steps",
        "32",
    ]);
    assert_eq!(code(&out), 0);
    let report = report_from(&out);
    let table = &report["results"]["table"];
    let z_norms: Vec<f64> = table["z_norms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let rows = table["values"].as_array().unwrap();
    for row in &rows[1..rows.len() - 1] {
        for (j, col) in row.as_array().unwrap().iter().enumerate() {
            let g = col[0].as_f64().unwrap();
            assert!(
                (g - 0.3 * z_norms[j]).abs() < 1e-9,
                "g={g} at |z|={}",
                z_norms[j]
            );
        }
    }
    assert_eq!(report["results"]["roundtrip"]["pass"], true);
    assert_eq!(report["results"]["verify"]["pass"], true);
}

#[test]
fn recover_reads_sampled_tables_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("zeros.csv");
    let mut text = String::from("t,z,G\n");
    for i in 0..=10 {
        let t = f64::from(i) / 10.0;
        for z in [-1.0, -0.5, 0.5, 1.0] {
            text.push_str(&format!("{t},{z},0.0\n"));
        }
    }
    std::fs::write(&csv_path, text).unwrap();

    let spec = format!("csv:{}", csv_path.display());
    let out = gexpect(&["recover", "--oracle", &spec]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = report_from(&out);
    let rows = report["results"]["table"]["values"].as_array().unwrap();
    for row in rows {
        for col in row.as_array().unwrap() {
            assert_eq!(col[0].as_f64().unwrap(), 0.0);
        }
    }
    assert_eq!(report["results"]["roundtrip"]["pass"], true);
}

#[test]
fn malformed_csv_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("bad.csv");
    std::fs::write(&csv_path, "time,vol,G\n0,1,0\n").unwrap();
    let spec = format!("csv:{}", csv_path.display());
    let out = gexpect(&["recover", "--oracle", &spec]);
    assert_eq!(code(&out), 2);
}

#[test]
fn decompose_splits_linear_drift_excess() {
    let out = gexpect(&["decompose", "--psi", "drift:c=1", "--gen", "zero"]);
    assert_eq!(code(&out), 0);
    let report = report_from(&out);
    let results = &report["results"];
    assert_eq!(results["converged"], true);
    assert_eq!(results["monotonicity_violations"], 0);
    let ts = results["t"].as_array().unwrap();
    let a = results["a"].as_array().unwrap();
    for (t, ai) in ts.iter().zip(a) {
        let gap = (ai.as_f64().unwrap() - t.as_f64().unwrap()).abs();
        assert!(gap < 1e-6, "a({}) off by {gap}", t);
    }
}

#[test]
fn decompose_reads_kinked_paths_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("kink.csv");
    let mut text = String::from("t,psi\n");
    for i in 0..=64 {
        let t = f64::from(i) / 64.0;
        text.push_str(&format!("{t},{}\n", -(t - 0.5).max(0.0)));
    }
    std::fs::write(&csv_path, text).unwrap();

    let spec = format!("csv:{}", csv_path.display());
    let out = gexpect(&["decompose", "--psi", &spec, "--gen", "zero"]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = report_from(&out);
    let ts = report["results"]["t"].as_array().unwrap();
    let a = report["results"]["a"].as_array().unwrap();
    for (t, ai) in ts.iter().zip(a) {
        let expected = (t.as_f64().unwrap() - 0.5).max(0.0);
        assert!((ai.as_f64().unwrap() - expected).abs() < 1e-5);
    }
}

#[test]
fn violated_preconditions_exit_as_numeric_failures() {
    let out = gexpect(&["decompose", "--psi", "drift:c=-1", "--gen", "zero"]);
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("supermartingale"), "{stderr}");
}

#[test]
fn axiom_suite_passes_for_builtin_oracles() {
    let out = gexpect(&[
        "check",
        "--suite",
        "axioms",
        "--oracle",
        "builtin:linear:mu=1",
    ]);
    assert_eq!(code(&out), 0);
    let report = report_from(&out);
    let reports = report["results"]["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    assert!(reports.iter().all(|r| r["verdict"] != "Fail"));
    assert_eq!(reports[3]["verdict"], "Skipped");
}

#[test]
fn undersized_domination_modulus_fails_with_witnesses() {
    let out = gexpect(&[
        "check",
        "--suite",
        "domination",
        "--gen",
        "quadratic:nu=0.5",
        "--k",
        "2",
        "--rho-scale",
        "0.5",
        "--samples",
        "120",
    ]);
    assert_eq!(code(&out), 1);
    let report = report_from(&out);
    let dom = &report["results"]["reports"][0];
    assert_eq!(dom["verdict"], "Fail");
    let witnesses = dom["failures"].as_array().unwrap();
    assert!(!witnesses.is_empty());
    assert!(witnesses[0]["inputs"]["z1_norm"].as_f64().unwrap() > 0.0);
}

#[test]
fn concavity_of_the_negated_quadratic_passes() {
    let out = gexpect(&[
        "check",
        "--suite",
        "convexity",
        "--gen",
        "quadratic:nu=0.5",
        "--negated",
        "--property",
        "concavity",
        "--samples",
        "80",
    ]);
    assert_eq!(
        code(&out),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = report_from(&out);
    let reports = report["results"]["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0]["property"], "concavity");
    assert_eq!(reports[0]["verdict"], "Pass");
}

#[test]
fn unknown_driver_kinds_exit_as_usage_errors() {
    let out = gexpect(&["solve", "--gen", "warp:q=1", "--terminal", "y=1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn reports_replay_bit_identically_from_their_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let out = gexpect(&[
        "check",
        "--suite",
        "domination",
        "--gen",
        "quadratic:nu=0.3",
        "--k",
        "1",
        "--samples",
        "60",
        "--seed",
        "97",
        "--output",
        first.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let out = gexpect(&[
        "check",
        "--from-report",
        first.to_str().unwrap(),
        "--output",
        second.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let (r1, r2) = (load(&first), load(&second));
    assert_eq!(
        serde_json::to_string(&r1["config"]).unwrap(),
        serde_json::to_string(&r2["config"]).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&r1["results"]).unwrap(),
        serde_json::to_string(&r2["results"]).unwrap()
    );
    assert_eq!(r1["config"]["seed"], 97);
}

fn load(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn seed_sources_layer_correctly() {
    // Config file supplies the seed; an explicit flag beats it; the
    // environment beats both.
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[run]\nseed = 11\n\n[params]\ngen = \"zero\"\nterminal = \"y=1\"\n",
    )
    .unwrap();

    let out = gexpect(&["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(report_from(&out)["config"]["seed"], 11);

    let out = gexpect(&["solve", "--config", cfg.to_str().unwrap(), "--seed", "22"]);
    assert_eq!(report_from(&out)["config"]["seed"], 22);

    let out = Command::new(env!("CARGO_BIN_EXE_gexpect"))
        .args(["solve", "--config", cfg.to_str().unwrap(), "--seed", "22"])
        .env("GEXPECT_SEED", "33")
        .output()
        .unwrap();
    assert_eq!(report_from(&out)["config"]["seed"], 33);
}

#[test]
fn flags_override_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[run]\nhorizon = 2.0\n\n[params]\ngen = \"linear:mu=0.5\"\nterminal = \"y=0,z=1\"\n",
    )
    .unwrap();

    // Horizon from the file: window defaults to [0, 2], value 0.5·1·2 = 1.
    let out = gexpect(&["solve", "--config", cfg.to_str().unwrap()]);
    let v = report_from(&out)["results"]["values"][0]["deterministic"][0]
        .as_f64()
        .unwrap();
    assert!((v - 1.0).abs() < 1e-12);

    // Flag overrides: [0, 1] window halves the drift.
    let out = gexpect(&["solve", "--config", cfg.to_str().unwrap(), "--horizon", "1"]);
    let v = report_from(&out)["results"]["values"][0]["deterministic"][0]
        .as_f64()
        .unwrap();
    assert!((v - 0.5).abs() < 1e-12);
}
