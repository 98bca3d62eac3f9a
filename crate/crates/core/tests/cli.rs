use std::path::{Path, PathBuf};

use serde_json::Value;
use spinbath::cli::{run_from, EXIT_CONFIG, EXIT_INVALID, EXIT_OK};
use spinbath::experiment_fit::FitParams;
use spinbath::io::read_csv;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["spinbath".to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    run_from(v)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn every_column_is_documented() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, cfg) in [
        ("fid", "fid_revival.json"),
        ("rabi", "rabi_n20.json"),
        ("rabi", "rabi_ou.json"),
        ("lineshape", "lineshape.json"),
        ("echo", "echo_ou.json"),
        ("correlator", "correlator.json"),
    ] {
        let out = dir.path().join(format!("{cmd}-{cfg}.csv"));
        let code = run(&[
            cmd,
            "--config",
            configs().join(cfg).to_str().unwrap(),
            "--samples",
            "300",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK, "{cmd} {cfg}");
        let (header, names, rows) = read_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert!(!rows.is_empty());
        assert_eq!(header["command"], cmd);
        assert!(header["config"].is_object() && header["seed"].is_u64());
        for n in &names {
            assert!(header["columns"][n].is_string(), "{cmd}: column {n} undocumented");
        }
    }
}

#[test]
fn fid_has_revival_axis() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fid.csv");
    let cfg = configs().join("fid_revival.json");
    assert_eq!(run(&["fid", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    let (_, names, rows) = read_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let t = names.iter().position(|n| n == "t").unwrap();
    let x = names.iter().position(|n| n == "lambda_t_over_sqrt_n").unwrap();
    let last = rows.last().unwrap();
    assert!((last[x] - last[t] / 30f64.sqrt()).abs() < 1e-12);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_norm = write(
        dir.path(),
        "norm.json",
        r#"{"bath": {"type": "spins", "alpha": [1, 1], "lambda": 1},
            "sweep": {"start": 0, "stop": 1, "points": 3}}"#,
    );
    assert_eq!(run(&["fid", "--config", &bad_norm]), EXIT_CONFIG);
    assert_eq!(run(&["validate", "--config", &bad_norm]), EXIT_CONFIG);
    let unknown = write(dir.path(), "unknown.json", r#"{"bathh": {}}"#);
    assert_eq!(run(&["validate", "--config", &unknown]), EXIT_CONFIG);
    let too_large = write(
        dir.path(),
        "large.json",
        r#"{"bath": {"type": "random", "n": 30, "sigma_alpha": 0.1, "lambda": 1, "seed": 2},
            "qubit": {"delta": 0, "omega_rabi": 1},
            "sweep": {"start": 0, "stop": 1, "points": 3}}"#,
    );
    assert_eq!(run(&["rabi", "--config", &too_large, "--method", "exact"]), EXIT_CONFIG);
    let out = dir.path().join("ok.csv");
    assert_eq!(
        run(&["rabi", "--config", &too_large, "--method", "continuum", "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    assert_eq!(run(&["fit"]), EXIT_CONFIG);
    assert_eq!(run(&["preset", "nonesuch"]), EXIT_CONFIG);
}

#[test]
fn invalid_approximation_needs_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sp.json",
        r#"{"bath": {"type": "gaussian_dos", "mean": 0, "sigma": 1},
            "qubit": {"delta": 3, "omega_rabi": 1},
            "sweep": {"start": 0, "stop": 5, "points": 6}}"#,
    );
    let out = dir.path().join("r.csv");
    assert_eq!(run(&["rabi", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_INVALID);
    assert!(!out.exists());
    assert_eq!(run(&["validate", "--for", "rabi", "--config", &cfg]), EXIT_INVALID);
    assert_eq!(
        run(&["rabi", "--config", &cfg, "--allow-invalid", "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
    let (_, names, rows) = read_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let v = names.iter().position(|n| n == "stationary_valid").unwrap();
    assert!(rows.iter().all(|r| r[v] == 0.0));
}

#[test]
fn json_format_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.json");
    let cfg = configs().join("correlator.json");
    let code = run(&[
        "correlator",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["config"]["method"]["seed"], 9);
    assert_eq!(v["rows"].as_array().unwrap().len(), 31);
}

#[test]
fn fit_recovers_bundled_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.json");
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/rabi_synthetic.csv");
    assert_eq!(run(&["fit", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]), EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let report = &v["result"]["fit"];
    assert_eq!(report["converged"], true);
    let sidecar: Value = serde_json::from_str(
        &std::fs::read_to_string(data.with_extension("json")).unwrap(),
    )
    .unwrap();
    let truth: FitParams = serde_json::from_value(sidecar["config"]["synth"]["params"].clone()).unwrap();
    for (name, value) in [
        ("m_uu", truth.m_uu),
        ("m_dd", truth.m_dd),
        ("gamma_heat", truth.gamma_heat),
        ("lambda", truth.lambda),
    ] {
        let ci = report["ci90"][name].as_array().unwrap();
        let (lo, hi) = (ci[0].as_f64().unwrap(), ci[1].as_f64().unwrap());
        assert!(lo <= value && value <= hi, "{name}: {value} outside [{lo}, {hi}]");
    }
}

#[test]
fn synth_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let cfg = configs().join("synth.json");
    assert_eq!(run(&["synth", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]), EXIT_OK);
    let bundled = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/rabi_synthetic.csv");
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(bundled).unwrap());
    assert_eq!(run(&["synth"]), EXIT_CONFIG);
}

#[test]
fn presets_emit_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.json");
    assert_eq!(run(&["preset", "martinis", "--out", out.to_str().unwrap()]), EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["result"]["params"]["lambda"], 0.27);
    assert_eq!(run(&["preset", "gaas_qd", "--n", "100000", "--out", out.to_str().unwrap()]), EXIT_OK);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((v["result"]["lambda"].as_f64().unwrap() - 0.6546).abs() < 1e-4);
}
