use ddc_core::experiment::{read_rows_csv, SWEEP_COLUMNS};
use ddc_core::phase::solve_kappa_star;
use ddc_core::{DataModelSpec, FeatureMap, QuadratureSpec};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddc"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn gm_args() -> Vec<&'static str> {
    vec![
        "--model",
        "gm",
        "--map",
        "linear",
        "--r",
        "3.1622776601683795",
        "--zeta",
        "3",
    ]
}

const SWEEP_CONFIG: &str = r#"{
    "model": {"kind": "gm", "r": 3.1622776601683795},
    "map": {"kind": "linear", "r": 3.1622776601683795, "zeta": 3.0},
    "kappa_grid": {"start": 0.2, "stop": 1.2, "step": 0.5},
    "n": 40, "trials": 3, "seed": 11
}"#;

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&ddc(&["--help"])), 0);
    assert_eq!(code(&ddc(&["sweep", "--help"])), 0);
    assert_eq!(code(&ddc(&[])), 1);
    assert_eq!(code(&ddc(&["theory", "--model", "probit"])), 1);
}

#[test]
fn theory_single_point_and_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let mut args = vec!["theory"];
    args.extend(gm_args());
    args.extend(["--kappa", "0.1", "--out", out.to_str().unwrap()]);
    let run = ddc(&args);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), SWEEP_COLUMNS.join(","));
    let rows = read_rows_csv(&out).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].risk_theory.is_some() && rows[0].risk_sim_mean.is_none());

    let mut args = vec!["theory"];
    args.extend(gm_args());
    args.extend([
        "--kappa-grid",
        "0.1:2.9:0.4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&ddc(&args)), 0);
    assert_eq!(read_rows_csv(&out).unwrap().len(), 8);
}

#[test]
fn theory_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let out = out.to_str().unwrap();

    let mut outside = vec!["theory"];
    outside.extend(gm_args());
    outside.extend(["--kappa", "4", "--out", out]);
    assert_eq!(code(&ddc(&outside)), 1);

    let mixed = [
        "theory", "--model", "gm", "--map", "poly", "--r", "2", "--zeta", "3", "--kappa", "0.2",
        "--out", out,
    ];
    assert_eq!(code(&ddc(&mixed)), 1);

    let r = 10f64.sqrt();
    let ks = solve_kappa_star(
        &DataModelSpec::gaussian_mixture(r).unwrap(),
        &FeatureMap::linear(r, 3.0).unwrap(),
        &QuadratureSpec::default(),
    )
    .unwrap()
    .kappa_star;
    let near = format!("{}", ks + 1e-4);
    let mut at = vec!["theory"];
    at.extend(gm_args());
    at.extend(["--kappa", near.as_str(), "--out", out]);
    let run = ddc(&at);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("near-threshold"));
}

#[test]
fn phase_prints_threshold_and_curve() {
    let mut args = vec!["phase"];
    args.extend(gm_args());
    args.extend(["--points", "20"]);
    let run = ddc(&args);
    assert_eq!(code(&run), 0);
    let text = String::from_utf8(run.stdout).unwrap();
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    let value: f64 = first
        .strip_prefix("kappa_star = ")
        .unwrap()
        .parse()
        .unwrap();
    assert!(value > 0.0 && value <= 0.5);
    assert_eq!(lines.next().unwrap(), "kappa,g,t");
    let curve: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(curve.len(), 20);
    assert!(curve.windows(2).all(|w| w[1][1] < w[0][1]));
}

#[test]
fn simulate_writes_trials() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let mut args = vec!["simulate"];
    args.extend(gm_args());
    args.extend([
        "--kappa",
        "1.0",
        "--n",
        "60",
        "--trials",
        "4",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let run = ddc(&args);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("risk_mean = ") && stdout.contains("sep_fraction = "));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("trial,stream,p,separable,"));

    let mut zero = vec!["simulate"];
    zero.extend(gm_args());
    zero.extend([
        "--kappa",
        "1.0",
        "--n",
        "60",
        "--trials",
        "0",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&ddc(&zero)), 1);
}

fn sweep(config: &Path, out: &Path, threads: &str) -> Output {
    ddc(&[
        "sweep",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--threads",
        threads,
    ])
}

#[test]
fn sweep_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, SWEEP_CONFIG).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let run = sweep(&config, &a, "1");
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(code(&sweep(&config, &b, "2")), 0);
    let csv_a = fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("sweep.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("sweep.json")).unwrap(),
        fs::read(b.join("sweep.json")).unwrap()
    );
    let rows = read_rows_csv(&a.join("sweep.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.trials == 3 && r.seed == 11));
    let sidecar = fs::read_to_string(a.join("sweep.json")).unwrap();
    assert!(sidecar.contains(r#""seed": 11"#) && sidecar.contains(r#""rows": 3"#));
}

#[test]
fn sweep_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&sweep(&dir.path().join("missing.json"), &out, "1")), 1);
    let config = dir.path().join("c.json");
    fs::write(
        &config,
        SWEEP_CONFIG.replace(r#""stop": 1.2"#, r#""stop": 3.5"#),
    )
    .unwrap();
    assert_eq!(code(&sweep(&config, &out, "1")), 1);
    fs::write(&config, "not json").unwrap();
    assert_eq!(code(&sweep(&config, &out, "1")), 1);
}
