//! Grid sweeps that pair the asymptotic predictions with Monte Carlo runs,
//! and the CSV / JSON files they produce.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_stream, trial_stream};
use crate::error::{Error, Result};
use crate::feature_map::{noise_at, FeatureMap, SignalProfile};
use crate::gaussian::{NoiseModelV, QuadratureSpec};
use crate::ml::{ml_predictions, solve_ml_below, MlConfig, MlSolution, Predictions};
use crate::model::DataModelSpec;
use crate::phase::solve_kappa_star;
use crate::svm::{solve_svm_above, svm_predictions, SvmSolution, SvmTheoryConfig};
use crate::trainers::{
    exact_metrics, gd_logistic, is_separable, svm_train, GdConfig, SvmConfig, TrainedClassifier,
};

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Estimator used in the Monte Carlo trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMethod {
    /// Gradient descent on the logistic loss for every trial.
    Gd,
    /// Hard-margin SVM; trials with non-separable data carry no risk.
    Svm,
    /// The limit of gradient descent: the SVM on separable data, gradient
    /// descent (the ML estimate) otherwise.
    Both,
}

impl std::str::FromStr for SimMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Self::Gd),
            "svm" => Ok(Self::Svm),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl KappaGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.start > 0.0 && self.stop >= self.start)
            || ![self.start, self.stop, self.step]
                .iter()
                .all(|v| v.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "kappa grid needs 0 < start <= stop and step > 0, got {}:{}:{}",
                self.start, self.stop, self.step
            )));
        }
        Ok(())
    }

    /// `start + i step` up to `stop`, allowing for rounding at the end.
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| self.start + i as f64 * self.step)
            .collect()
    }
}

impl std::str::FromStr for KappaGrid {
    type Err = Error;

    /// `start:stop:step`
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParameter(format!("expected start:stop:step, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let grid = KappaGrid {
            start: v[0],
            stop: v[1],
            step: v[2],
        };
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub ml: MlConfig,
    pub svm_theory: SvmTheoryConfig,
    pub gd: GdConfig,
    pub svm: SvmConfig,
    /// Half-width of the band around `kappa*` where no theory is computed.
    pub threshold_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ml: MlConfig::default(),
            svm_theory: SvmTheoryConfig::default(),
            gd: GdConfig::default(),
            svm: SvmConfig::default(),
            threshold_margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: DataModelSpec,
    pub map: FeatureMap,
    pub kappa_grid: KappaGrid,
    pub n: usize,
    /// Monte Carlo trials per grid point; 0 gives a theory-only sweep.
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default = "default_method")]
    pub method: SimMethod,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_method() -> SimMethod {
    SimMethod::Both
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.map.validate()?;
        self.kappa_grid.validate()?;
        self.quadrature.validate()?;
        for k in self.kappa_grid.points() {
            if !self.map.contains(k) {
                return Err(Error::OutOfDomain {
                    kappa: k,
                    domain: self.map.domain(),
                });
            }
        }
        if self.trials > 0 && self.n == 0 {
            return Err(Error::InvalidParameter(
                "n must be positive when trials > 0".into(),
            ));
        }
        if !(self.tolerances.threshold_margin >= 0.0) {
            return Err(Error::InvalidParameter(
                "threshold_margin must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn ml_config(&self) -> MlConfig {
        MlConfig {
            threshold_margin: self.tolerances.threshold_margin,
            ..self.tolerances.ml
        }
    }

    fn svm_theory_config(&self) -> SvmTheoryConfig {
        SvmTheoryConfig {
            threshold_margin: self.tolerances.threshold_margin,
            ..self.tolerances.svm_theory
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    ML,
    SVM,
}

impl Regime {
    pub fn of(kappa: f64, kappa_star: f64) -> Self {
        if kappa < kappa_star {
            Regime::ML
        } else {
            Regime::SVM
        }
    }
}

/// Asymptotic prediction at one `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryPoint {
    pub kappa: f64,
    pub kappa_star: f64,
    pub regime: Regime,
    pub s: f64,
    pub predictions: Option<Predictions>,
    pub ml: Option<MlSolution>,
    pub svm: Option<SvmSolution>,
    /// Empty on success.
    pub flags: Vec<String>,
}

/// Solve the regime-appropriate system at `kappa`. A point within the
/// margin of `kappa*` is flagged `near-threshold`; solver failures are flagged
/// with their message.
pub fn theory_point(
    model: &DataModelSpec,
    map: &FeatureMap,
    kappa: f64,
    kappa_star: f64,
    quad: &QuadratureSpec,
    ml_cfg: &MlConfig,
    svm_cfg: &SvmTheoryConfig,
) -> Result<TheoryPoint> {
    let noise = noise_at(model, map, kappa)?;
    let mut point = TheoryPoint {
        kappa,
        kappa_star,
        regime: Regime::of(kappa, kappa_star),
        s: noise.s,
        predictions: None,
        ml: None,
        svm: None,
        flags: Vec::new(),
    };
    if (kappa - kappa_star).abs() < ml_cfg.threshold_margin {
        point.flags.push("near-threshold".into());
        return Ok(point);
    }
    let outcome = match point.regime {
        Regime::ML => solve_ml_below(model, map, kappa, kappa_star, quad, ml_cfg).and_then(|sol| {
            point.ml = Some(sol);
            ml_predictions(&sol, model, &noise, quad)
        }),
        Regime::SVM => {
            solve_svm_above(model, map, kappa, kappa_star, quad, svm_cfg).and_then(|sol| {
                point.svm = Some(sol);
                svm_predictions(&sol, model, &noise, quad)
            })
        }
    };
    match outcome {
        Ok(p) => point.predictions = Some(p),
        Err(Error::MlNoConvergence(sol)) => {
            point.ml = Some(*sol);
            point
                .flags
                .push(format!("ml-no-convergence({} iterations)", sol.iterations));
        }
        Err(e) => point.flags.push(format!("theory-failed({e})")),
    }
    Ok(point)
}

/// Outcome of one Monte Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub stream: u64,
    pub p: usize,
    pub separable: bool,
    pub train_error: f64,
    /// `None` when the estimator does not exist (SVM on non-separable data).
    pub risk: Option<f64>,
    pub cosine: Option<f64>,
    pub method: String,
    pub iterations: usize,
    pub hit_cap: bool,
    /// Gradient descent interpolated while the LP found no separator, or
    /// the reverse.
    pub separability_disagreement: bool,
}

/// Draw one training set and fit it with `method`.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    model: &DataModelSpec,
    map: &FeatureMap,
    n: usize,
    kappa: f64,
    seed: u64,
    stream: u64,
    method: SimMethod,
    tol: &Tolerances,
    quad: &QuadratureSpec,
) -> Result<TrialResult> {
    let data = generate_stream(model, map, n, kappa, seed, stream)?;
    let noise = NoiseModelV::from_parts(model.kind, data.meta.s, data.meta.sigma)?;
    let svm_cfg = SvmConfig {
        seed: seed ^ stream.rotate_left(17),
        ..tol.svm
    };
    let separable = is_separable(&data)?;
    let mut disagreement = false;
    let fitted: Option<TrainedClassifier> = match method {
        SimMethod::Gd => {
            let c = gd_logistic(&data, &tol.gd)?;
            disagreement = (c.train_error == 0.0) != separable;
            Some(c)
        }
        SimMethod::Svm => {
            let c = svm_train(&data, &svm_cfg)?;
            c.separable.then_some(c)
        }
        SimMethod::Both => {
            if separable {
                Some(svm_train(&data, &svm_cfg)?)
            } else {
                Some(gd_logistic(&data, &tol.gd)?)
            }
        }
    };
    let metrics = fitted
        .as_ref()
        .filter(|c| c.beta.iter().any(|&b| b != 0.0))
        .map(|c| exact_metrics(&c.beta, model, &noise, quad))
        .transpose()?;
    Ok(TrialResult {
        trial: 0,
        stream,
        p: data.meta.p,
        separable,
        train_error: fitted.as_ref().map_or(1.0, |c| c.train_error),
        risk: metrics.map(|m| m.risk),
        cosine: metrics.map(|m| m.cosine),
        method: fitted.as_ref().map_or("none".into(), |c| {
            serde_json::to_value(c.method)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default()
        }),
        iterations: fitted.as_ref().map_or(0, |c| c.diagnostics.iterations),
        hit_cap: fitted.as_ref().is_some_and(|c| c.diagnostics.hit_cap()),
        separability_disagreement: disagreement,
    })
}

/// `trials` independent trials at one `kappa` (grid index 0 streams), in
/// trial order.
#[allow(clippy::too_many_arguments)]
pub fn simulate_point(
    model: &DataModelSpec,
    map: &FeatureMap,
    n: usize,
    kappa: f64,
    seed: u64,
    trials: usize,
    method: SimMethod,
    tol: &Tolerances,
    quad: &QuadratureSpec,
    threads: Option<usize>,
) -> Result<Vec<TrialResult>> {
    pool(threads)?.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                run_trial(
                    model,
                    map,
                    n,
                    kappa,
                    seed,
                    trial_stream(0, t),
                    method,
                    tol,
                    quad,
                )
                .map(|mut r| {
                    r.trial = t;
                    r
                })
            })
            .collect()
    })
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kappa: f64,
    pub kappa_star: f64,
    pub regime: Regime,
    pub s: f64,
    pub risk_theory: Option<f64>,
    pub excess_theory: Option<f64>,
    pub cosine_theory: Option<f64>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub q_star: Option<f64>,
    pub rho_star: Option<f64>,
    pub normalized_margin: Option<f64>,
    pub risk_sim_mean: Option<f64>,
    pub risk_sim_std: Option<f64>,
    pub cosine_sim_mean: Option<f64>,
    pub train_error_mean: Option<f64>,
    pub sep_fraction: Option<f64>,
    pub trials: usize,
    pub n: usize,
    pub seed: u64,
    pub solver_flags: String,
}

pub const SWEEP_COLUMNS: [&str; 22] = [
    "kappa",
    "kappa_star",
    "regime",
    "s",
    "risk_theory",
    "excess_theory",
    "cosine_theory",
    "mu",
    "alpha",
    "lambda",
    "q_star",
    "rho_star",
    "normalized_margin",
    "risk_sim_mean",
    "risk_sim_std",
    "cosine_sim_mean",
    "train_error_mean",
    "sep_fraction",
    "trials",
    "n",
    "seed",
    "solver_flags",
];

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

impl SweepRow {
    pub fn new(theory: &TheoryPoint, trials: &[TrialResult], n: usize, seed: u64) -> Self {
        let pred = theory.predictions;
        let solved_ml = theory.ml.filter(|s| s.converged);
        let mut flags = theory.flags.clone();
        let risks: Vec<f64> = trials.iter().filter_map(|t| t.risk).collect();
        let cosines: Vec<f64> = trials.iter().filter_map(|t| t.cosine).collect();
        let (risk_mean, risk_std) = mean_std(&risks);
        let caps = trials.iter().filter(|t| t.hit_cap).count();
        if caps > 0 {
            flags.push(format!("iteration-cap({caps})"));
        }
        let missing = trials.len() - risks.len();
        if missing > 0 {
            flags.push(format!("no-estimator({missing})"));
        }
        let disagree = trials
            .iter()
            .filter(|t| t.separability_disagreement)
            .count();
        if disagree > 0 {
            flags.push(format!("separability-disagreement({disagree})"));
        }
        let frac = |f: &dyn Fn(&TrialResult) -> f64| {
            (!trials.is_empty()).then(|| trials.iter().map(f).sum::<f64>() / trials.len() as f64)
        };
        SweepRow {
            kappa: theory.kappa,
            kappa_star: theory.kappa_star,
            regime: theory.regime,
            s: theory.s,
            risk_theory: pred.map(|p| p.risk),
            excess_theory: pred.map(|p| p.excess),
            cosine_theory: pred.map(|p| p.cosine),
            mu: solved_ml.map(|s| s.mu),
            alpha: solved_ml.map(|s| s.alpha),
            lambda: solved_ml.map(|s| s.lambda),
            q_star: theory.svm.map(|s| s.q_star),
            rho_star: theory.svm.map(|s| s.rho_star),
            normalized_margin: theory.svm.map(|s| s.normalized_margin),
            risk_sim_mean: risk_mean,
            risk_sim_std: risk_std,
            cosine_sim_mean: mean_std(&cosines).0,
            train_error_mean: frac(&|t| t.train_error),
            sep_fraction: frac(&|t| if t.separable { 1.0 } else { 0.0 }),
            trials: trials.len(),
            n,
            seed,
            solver_flags: flags.join(";"),
        }
    }

    fn fields(&self) -> [String; 22] {
        let f = |v: f64| format!("{v:.16e}");
        let o = |v: Option<f64>| v.map(f).unwrap_or_default();
        [
            f(self.kappa),
            f(self.kappa_star),
            format!("{:?}", self.regime),
            f(self.s),
            o(self.risk_theory),
            o(self.excess_theory),
            o(self.cosine_theory),
            o(self.mu),
            o(self.alpha),
            o(self.lambda),
            o(self.q_star),
            o(self.rho_star),
            o(self.normalized_margin),
            o(self.risk_sim_mean),
            o(self.risk_sim_std),
            o(self.cosine_sim_mean),
            o(self.train_error_mean),
            o(self.sep_fraction),
            self.trials.to_string(),
            self.n.to_string(),
            self.seed.to_string(),
            self.solver_flags.clone(),
        ]
    }
}

/// Write rows with a header; reals use 17 significant digits and missing
/// values are empty fields.
pub fn write_rows_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_COLUMNS)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != SWEEP_COLUMNS {
        return Err(Error::InvalidParameter(format!(
            "unexpected sweep header {header:?}"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Everything needed to reproduce a sweep, written next to its CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub library: String,
    pub library_version: String,
    pub config: ExperimentConfig,
    pub kappa_star: f64,
    pub rows: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub kappa_star: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepOutput {
    /// Write `sweep.csv` and `sweep.json` into `dir`; returns both paths.
    pub fn write(&self, config: &ExperimentConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join("sweep.csv");
        let json_path = dir.join("sweep.json");
        write_rows_csv(&csv_path, &self.rows)?;
        let sidecar = Sidecar {
            library: env!("CARGO_PKG_NAME").into(),
            library_version: LIBRARY_VERSION.into(),
            config: config.clone(),
            kappa_star: self.kappa_star,
            rows: self.rows.len(),
        };
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        fs::write(&json_path, text)?;
        Ok((csv_path, json_path))
    }
}

/// Worker count from `requested`, else `DDC_THREADS`, else rayon's default.
pub fn thread_count(requested: Option<usize>) -> Option<usize> {
    requested
        .or_else(|| std::env::var("DDC_THREADS").ok()?.trim().parse().ok())
        .filter(|&t| t > 0)
}

/// Run the sweep on a pool of `threads` workers (see [`thread_count`]).
/// Results are assembled in grid and trial order, so output does not depend
/// on scheduling.
pub fn run_sweep(config: &ExperimentConfig, threads: Option<usize>) -> Result<SweepOutput> {
    config.validate()?;
    pool(threads)?.install(|| sweep_in_pool(config))
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_count(threads) {
        builder = builder.num_threads(t);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

fn sweep_in_pool(config: &ExperimentConfig) -> Result<SweepOutput> {
    let quad = &config.quadrature;
    let kappa_star = solve_kappa_star(&config.model, &config.map, quad)?.kappa_star;
    let kappas = config.kappa_grid.points();
    let ml_cfg = config.ml_config();
    let svm_cfg = config.svm_theory_config();
    let theory: Vec<TheoryPoint> = kappas
        .par_iter()
        .map(|&k| {
            theory_point(
                &config.model,
                &config.map,
                k,
                kappa_star,
                quad,
                &ml_cfg,
                &svm_cfg,
            )
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..kappas.len())
        .flat_map(|i| (0..config.trials).map(move |t| (i, t)))
        .collect();
    let results: Vec<std::result::Result<TrialResult, String>> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let stream = trial_stream(i, t);
            run_trial(
                &config.model,
                &config.map,
                config.n,
                kappas[i],
                config.seed,
                stream,
                config.method,
                &config.tolerances,
                quad,
            )
            .map(|mut r| {
                r.trial = t;
                r
            })
            .map_err(|e| e.to_string())
        })
        .collect();
    let mut rows = Vec::with_capacity(kappas.len());
    let mut chunks = results.chunks(config.trials.max(1));
    for point in &theory {
        let chunk = if config.trials > 0 {
            chunks.next().unwrap_or(&[])
        } else {
            &[]
        };
        let ok: Vec<TrialResult> = chunk
            .iter()
            .filter_map(|r| r.as_ref().ok().cloned())
            .collect();
        let mut row = SweepRow::new(point, &ok, config.n, config.seed);
        let failed: Vec<&String> = chunk.iter().filter_map(|r| r.as_ref().err()).collect();
        if let Some(first) = failed.first() {
            let note = format!("trial-failed({}: {first})", failed.len());
            row.solver_flags = if row.solver_flags.is_empty() {
                note
            } else {
                format!("{};{note}", row.solver_flags)
            };
        }
        rows.push(row);
    }
    rows.sort_by(|a, b| a.kappa.total_cmp(&b.kappa));
    Ok(SweepOutput { kappa_star, rows })
}

/// `(kappa, g(kappa), t*)` on `points` equally spaced values in
/// `(0, min(1/2, kappa_max)]`, for the threshold curve.
pub fn threshold_curve(
    model: &DataModelSpec,
    map: &FeatureMap,
    points: usize,
    quad: &QuadratureSpec,
) -> Result<Vec<(f64, f64, f64)>> {
    let top = 0.5f64.min(map.kappa_max());
    (1..=points)
        .into_par_iter()
        .map(|i| {
            let k = top * i as f64 / points as f64;
            let m = crate::phase::threshold_min(&noise_at(model, map, k)?, quad)?;
            Ok((k, m.g, m.t))
        })
        .collect()
}

/// Format the threshold curve as CSV text.
pub fn threshold_curve_csv(curve: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("kappa,g,t\n");
    for (k, g, t) in curve {
        let _ = writeln!(out, "{k:.16e},{g:.16e},{t:.16e}");
    }
    out
}
