use ddc_core::experiment::{
    read_rows_csv, run_sweep, write_rows_csv, ExperimentConfig, KappaGrid, Regime, Sidecar,
    SimMethod, SweepRow, Tolerances,
};
use ddc_core::{DataModelSpec, FeatureMap, QuadratureSpec};
use proptest::prelude::*;
use std::fs;

fn mixture_config(grid: KappaGrid, n: usize, trials: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        model: DataModelSpec::gaussian_mixture(10f64.sqrt()).unwrap(),
        map: FeatureMap::linear(10f64.sqrt(), 3.0).unwrap(),
        kappa_grid: grid,
        n,
        trials,
        seed,
        quadrature: QuadratureSpec::default(),
        method: SimMethod::Both,
        tolerances: Tolerances::default(),
    }
}

fn grid(start: f64, stop: f64, step: f64) -> KappaGrid {
    KappaGrid { start, stop, step }
}

#[test]
fn theory_only_sweep_has_empty_simulation_columns() {
    let cfg = mixture_config(grid(0.1, 1.5, 0.2), 0, 0, 1);
    let out = run_sweep(&cfg, Some(1)).unwrap();
    assert_eq!(out.rows.len(), 8);
    for row in &out.rows {
        assert_eq!(row.trials, 0);
        assert!(
            row.risk_sim_mean.is_none()
                && row.risk_sim_std.is_none()
                && row.cosine_sim_mean.is_none()
        );
        assert!(row.train_error_mean.is_none() && row.sep_fraction.is_none());
        assert!(row.risk_theory.is_some(), "{row:?}");
        match row.regime {
            Regime::ML => assert!(row.mu.is_some() && row.q_star.is_none()),
            Regime::SVM => assert!(row.q_star.is_some() && row.mu.is_none()),
        }
    }
}

#[test]
fn dead_zone_rows_carry_no_theory() {
    let mut cfg = mixture_config(grid(0.02, 0.6, 0.02), 0, 0, 1);
    cfg.tolerances.threshold_margin = 0.03;
    let out = run_sweep(&cfg, Some(1)).unwrap();
    let mut dead = 0;
    for row in &out.rows {
        if (row.kappa - out.kappa_star).abs() < 0.03 {
            dead += 1;
            assert_eq!(row.solver_flags, "near-threshold");
            assert!(row.risk_theory.is_none() && row.mu.is_none() && row.q_star.is_none());
        } else {
            assert!(
                row.risk_theory.is_some() && row.solver_flags.is_empty(),
                "{row:?}"
            );
        }
    }
    assert!(dead >= 2);
}

#[test]
fn sweep_is_deterministic_across_threads_and_round_trips() {
    let cfg = mixture_config(grid(0.2, 1.2, 0.5), 40, 3, 2024);
    let one = run_sweep(&cfg, Some(1)).unwrap();
    let two = run_sweep(&cfg, Some(2)).unwrap();
    assert_eq!(one.rows, two.rows);
    assert!(one
        .rows
        .iter()
        .all(|r| r.trials == 3 && r.risk_sim_mean.is_some()));

    let dir = tempfile::tempdir().unwrap();
    let (csv_a, json_a) = one.write(&cfg, &dir.path().join("a")).unwrap();
    let (csv_b, _) = two.write(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(fs::read(&csv_a).unwrap(), fs::read(&csv_b).unwrap());
    assert_eq!(read_rows_csv(&csv_a).unwrap(), one.rows);

    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&json_a).unwrap()).unwrap();
    assert_eq!(sidecar.config, cfg);
    assert_eq!(sidecar.rows, 3);
    assert_eq!(sidecar.kappa_star, one.kappa_star);
    assert_eq!(sidecar.library_version, env!("CARGO_PKG_VERSION"));
    let text = fs::read_to_string(&json_a).unwrap();
    for key in [
        "tolerances",
        "quadrature",
        "method",
        "max_iter",
        "threshold_margin",
    ] {
        assert!(text.contains(key), "sidecar lacks {key}");
    }
}

#[test]
fn config_defaults_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let minimal = r#"{
        "model": {"kind": "logistic", "r": 10.0},
        "map": {"kind": "polynomial", "r": 10.0, "gamma": 2.0},
        "kappa_grid": {"start": 0.1, "stop": 1.0, "step": 0.1},
        "n": 200, "trials": 5, "seed": 3
    }"#;
    fs::write(&path, minimal).unwrap();
    let cfg = ExperimentConfig::from_json_file(&path).unwrap();
    assert_eq!(cfg.method, SimMethod::Both);
    assert_eq!(cfg.quadrature, QuadratureSpec::default());
    assert_eq!(cfg.tolerances, Tolerances::default());
    assert_eq!(cfg.kappa_grid.points().len(), 10);

    let outside = minimal.replace(
        r#""kind": "polynomial", "r": 10.0, "gamma": 2.0"#,
        r#""kind": "linear", "r": 10.0, "zeta": 0.5"#,
    );
    fs::write(&path, outside).unwrap();
    assert!(ExperimentConfig::from_json_file(&path).is_err());
    let past_domain = minimal
        .replace(
            r#""kind": "polynomial", "r": 10.0, "gamma": 2.0"#,
            r#""kind": "linear", "r": 10.0, "zeta": 2.0"#,
        )
        .replace(r#""stop": 1.0"#, r#""stop": 3.0"#);
    fs::write(&path, past_domain).unwrap();
    assert!(ExperimentConfig::from_json_file(&path).is_err());
    fs::write(&path, minimal.replace(r#""n": 200"#, r#""n": 0"#)).unwrap();
    assert!(ExperimentConfig::from_json_file(&path).is_err());
    fs::write(&path, "{").unwrap();
    assert!(ExperimentConfig::from_json_file(&path).is_err());
}

#[test]
fn grid_parsing() {
    let g: KappaGrid = "0.1:1.0:0.1".parse().unwrap();
    assert_eq!(g.points().len(), 10);
    assert!((g.points()[9] - 1.0).abs() < 1e-12);
    assert!("0.1:1.0".parse::<KappaGrid>().is_err());
    assert!("1.0:0.1:0.1".parse::<KappaGrid>().is_err());
    assert!("0.1:1.0:0".parse::<KappaGrid>().is_err());
}

fn opt() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![
        Just(None),
        any::<f64>()
            .prop_filter("finite", |v| v.is_finite())
            .prop_map(Some)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_exact(
        kappa in 1e-6f64..1e3, s in 0.0f64..1e2,
        a in opt(), b in opt(), c in opt(), d in opt(), e in opt(),
        trials in 0usize..10_000, seed in any::<u64>(), svm in any::<bool>(),
        flags in "[a-z(),;:0-9 -]{0,30}",
    ) {
        let row = SweepRow {
            kappa,
            kappa_star: 0.3,
            regime: if svm { Regime::SVM } else { Regime::ML },
            s,
            risk_theory: a,
            excess_theory: b,
            cosine_theory: c,
            mu: d,
            alpha: e,
            lambda: a,
            q_star: b,
            rho_star: c,
            normalized_margin: d,
            risk_sim_mean: e,
            risk_sim_std: a,
            cosine_sim_mean: b,
            train_error_mean: c,
            sep_fraction: d,
            trials,
            n: 200,
            seed,
            solver_flags: flags,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        write_rows_csv(&path, std::slice::from_ref(&row)).unwrap();
        let back = read_rows_csv(&path).unwrap();
        prop_assert_eq!(back, vec![row]);
    }
}
