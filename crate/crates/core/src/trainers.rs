//! Finite-sample estimators: gradient descent on the logistic loss and the
//! hard-margin SVM, plus exact population metrics of a fitted direction.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::TrainSet;
use crate::error::{Error, Result};
use crate::feature_map::best_risk;
use crate::gaussian::{NoiseModelV, QuadratureSpec};
use crate::logistic::sigmoid;
use crate::ml::Predictions;
use crate::model::DataModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GdLogistic,
    HardMarginSvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Gradient norm below tolerance.
    Stationary,
    /// Data interpolated and the normalised direction stopped moving.
    DirectionStable,
    /// Data interpolated and the caller asked to stop there.
    Interpolated,
    /// KKT conditions of the SVM dual met.
    Kkt,
    /// No separating direction exists.
    NotSeparable,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub stop: StopReason,
    pub gradient_norm: Option<f64>,
    pub kkt_violation: Option<f64>,
}

impl Diagnostics {
    pub fn hit_cap(&self) -> bool {
        self.stop == StopReason::IterationCap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub beta: Vec<f64>,
    pub method: Method,
    /// Fraction of samples with `y_i w_i' beta <= 0`.
    pub train_error: f64,
    pub separable: bool,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Per-step change of `beta / ||beta||` below which an interpolating
    /// iterate counts as converged in direction.
    pub direction_tol: f64,
    pub power_iterations: usize,
    /// Stop as soon as the training error reaches zero.
    pub stop_on_interpolation: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            grad_tol: 1e-8,
            direction_tol: 1e-9,
            power_iterations: 30,
            stop_on_interpolation: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub kkt_tol: f64,
    pub max_epochs: usize,
    /// Coordinate-ascent divergence guards.
    pub norm_limit: f64,
    pub dual_limit: f64,
    /// Seed for the per-epoch coordinate permutations.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-6,
            max_epochs: 100_000,
            norm_limit: 1e6,
            dual_limit: 1e12,
            seed: 0,
        }
    }
}

/// Rows `y_i w_i`.
fn signed_rows(data: &TrainSet) -> Result<Array2<f64>> {
    let (n, p) = data.features.dim();
    if n == 0 || p == 0 || data.labels.len() != n {
        return Err(Error::BadShape {
            n,
            kappa: p as f64 / n.max(1) as f64,
            p,
        });
    }
    let y = ArrayView1::from(&data.labels[..]);
    Ok(&data.features * &y.insert_axis(Axis(1)))
}

fn train_error(z: &Array2<f64>, beta: &Array1<f64>) -> f64 {
    let wrong = z.dot(beta).iter().filter(|&&m| m <= 0.0).count();
    wrong as f64 / z.nrows() as f64
}

/// Largest squared singular value of `z` by power iteration from a fixed
/// start.
fn top_eigenvalue(z: &Array2<f64>, iterations: usize) -> f64 {
    let p = z.ncols();
    let mut v = Array1::from_elem(p, 1.0 / (p as f64).sqrt());
    let mut value = 0.0;
    for _ in 0..iterations.max(1) {
        let w = z.t().dot(&z.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            break;
        }
        value = norm;
        v = w / norm;
    }
    value.max(z.dot(&v).mapv(|x| x * x).sum())
}

/// Gradient descent from zero on the mean logistic loss with step `1 / L`,
/// `L = sigma_max(W)^2 / (4 n)`.
pub fn gd_logistic(data: &TrainSet, cfg: &GdConfig) -> Result<TrainedClassifier> {
    let z = signed_rows(data)?;
    let (n, p) = z.dim();
    let lipschitz = top_eigenvalue(&z, cfg.power_iterations) / (4.0 * n as f64);
    let step = 1.0 / lipschitz;
    let mut beta = Array1::<f64>::zeros(p);
    let mut grad_norm = f64::INFINITY;
    let mut stop = StopReason::IterationCap;
    let mut iterations = cfg.max_iter;
    for it in 0..cfg.max_iter {
        let margins = z.dot(&beta);
        let interpolates = margins.iter().all(|&m| m > 0.0);
        let weights = margins.mapv(|m| sigmoid(-m) / n as f64);
        let grad = -z.t().dot(&weights);
        grad_norm = grad.dot(&grad).sqrt();
        if grad_norm <= cfg.grad_tol {
            stop = StopReason::Stationary;
            iterations = it;
            break;
        }
        if interpolates && cfg.stop_on_interpolation {
            stop = StopReason::Interpolated;
            iterations = it;
            break;
        }
        let next = &beta - &(step * &grad);
        if interpolates {
            let a = beta.dot(&beta).sqrt();
            let b = next.dot(&next).sqrt();
            let change = (&next / b - &beta / a).mapv(|x| x * x).sum().sqrt();
            if change <= cfg.direction_tol {
                beta = next;
                stop = StopReason::DirectionStable;
                iterations = it + 1;
                break;
            }
        }
        beta = next;
    }
    let err = train_error(&z, &beta);
    Ok(TrainedClassifier {
        beta: beta.to_vec(),
        method: Method::GdLogistic,
        train_error: err,
        separable: err == 0.0,
        diagnostics: Diagnostics {
            iterations,
            stop,
            gradient_norm: Some(grad_norm),
            kkt_violation: None,
        },
    })
}

/// Whether some `beta` has `y_i w_i' beta >= 1` for all `i`, decided by a
/// linear-programming feasibility problem.
pub fn is_separable(data: &TrainSet) -> Result<bool> {
    let z = signed_rows(data)?;
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..z.ncols())
        .map(|_| problem.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for row in z.rows() {
        problem.add_constraint(
            vars.iter()
                .zip(row.iter())
                .map(|(&v, &c)| (v, c))
                .collect::<Vec<_>>(),
            ComparisonOp::Ge,
            1.0,
        );
    }
    match problem.solve() {
        Ok(_) => Ok(true),
        Err(microlp::Error::Infeasible) => Ok(false),
        Err(e) => Err(Error::InvalidParameter(format!(
            "separability LP failed: {e}"
        ))),
    }
}

/// Largest violation of the dual optimality conditions.
fn kkt_violation(margins: &Array1<f64>, dual: &[f64]) -> f64 {
    margins
        .iter()
        .zip(dual)
        .map(|(&m, &u)| {
            if u > 0.0 {
                (1.0 - m).abs()
            } else {
                (1.0 - m).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Hard-margin SVM without intercept, `min ||beta||^2` subject to
/// `y_i w_i' beta >= 1`.
///
/// Separability is decided first by [`is_separable`]. Separable data is then
/// solved by dual coordinate ascent over randomly permuted coordinates until
/// the KKT violation drops below `kkt_tol`. Non-separable data returns
/// `beta = 0`, `train_error = 1`.
pub fn svm_train(data: &TrainSet, cfg: &SvmConfig) -> Result<TrainedClassifier> {
    let z = signed_rows(data)?;
    let (n, p) = z.dim();
    let not_separable = |iterations, kkt| TrainedClassifier {
        beta: vec![0.0; p],
        method: Method::HardMarginSvm,
        train_error: 1.0,
        separable: false,
        diagnostics: Diagnostics {
            iterations,
            stop: StopReason::NotSeparable,
            gradient_norm: None,
            kkt_violation: kkt,
        },
    };
    if !is_separable(data)? {
        return Ok(not_separable(0, None));
    }
    let sq_norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut dual = vec![0.0; n];
    let mut beta = Array1::<f64>::zeros(p);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut kkt = f64::INFINITY;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            if sq_norms[i] == 0.0 {
                continue;
            }
            let row = z.row(i);
            let m = row.dot(&beta);
            let next = (dual[i] + (1.0 - m) / sq_norms[i]).max(0.0);
            let delta = next - dual[i];
            if delta != 0.0 {
                beta.scaled_add(delta, &row);
                dual[i] = next;
            }
        }
        let margins = z.dot(&beta);
        kkt = kkt_violation(&margins, &dual);
        let norm_sq = beta.dot(&beta);
        let dual_value = dual.iter().sum::<f64>() - 0.5 * norm_sq;
        if norm_sq.sqrt() > cfg.norm_limit || dual_value > cfg.dual_limit {
            return Ok(not_separable(epoch, Some(kkt)));
        }
        if kkt <= cfg.kkt_tol {
            return Ok(TrainedClassifier {
                train_error: train_error(&z, &beta),
                beta: beta.to_vec(),
                method: Method::HardMarginSvm,
                separable: true,
                diagnostics: Diagnostics {
                    iterations: epoch,
                    stop: StopReason::Kkt,
                    gradient_norm: None,
                    kkt_violation: Some(kkt),
                },
            });
        }
    }
    Ok(TrainedClassifier {
        train_error: train_error(&z, &beta),
        beta: beta.to_vec(),
        method: Method::HardMarginSvm,
        separable: true,
        diagnostics: Diagnostics {
            iterations: cfg.max_epochs,
            stop: StopReason::IterationCap,
            gradient_norm: None,
            kkt_violation: Some(kkt),
        },
    })
}

/// Population risk and cosine similarity of `beta` when the true direction
/// in the observed coordinates is `e_1` with strength `noise.s`.
pub fn exact_metrics(
    beta: &[f64],
    model: &DataModelSpec,
    noise: &NoiseModelV,
    quad: &QuadratureSpec,
) -> Result<Predictions> {
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 || beta.is_empty() {
        return Err(Error::ZeroVector);
    }
    let c = beta[0] / norm;
    let risk = noise.direction_risk(c, quad)?;
    Ok(Predictions {
        risk,
        excess: risk - best_risk(model, quad)?,
        cosine: noise.s * c / noise.r,
    })
}
