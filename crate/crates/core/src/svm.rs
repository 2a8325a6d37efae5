//! Limiting behaviour of the hard-margin SVM above the interpolation
//! threshold.
//!
//! For a margin level `q` and a direction cosine `rho` with the true signal,
//! `eta(q, rho) = E (rho V + sqrt(1 - rho^2) H - 1/q)_-^2 - (1 - rho^2) kappa`.
//! The limiting (unnormalised) margin `q*` is the root of
//! `eta_bar(q) = min_rho eta(q, rho)` and `rho*` is the minimiser at `q*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{best_risk, noise_at, SignalProfile};
use crate::gaussian::{
    truncated_second_moment, HvQuadrature, LabelProbability, NoiseModelV, QuadratureSpec,
};
use crate::ml::Predictions;
use crate::model::{DataModelSpec, ModelKind};
use crate::phase::solve_kappa_star;
use crate::roots::{brent, scan_then_golden};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmTheoryConfig {
    /// Grid points for the initial scan over `rho in [-1, 1]`.
    pub scan_points: usize,
    /// Tolerance of the golden-section refinement in `rho`.
    pub rho_tol: f64,
    /// Relative tolerance on `q*`.
    pub q_rel_tol: f64,
    /// Points with `kappa < kappa* + threshold_margin` are rejected.
    pub threshold_margin: f64,
}

impl Default for SvmTheoryConfig {
    fn default() -> Self {
        Self {
            scan_points: 200,
            rho_tol: 1e-10,
            q_rel_tol: 1e-10,
            threshold_margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmSolution {
    pub q_star: f64,
    pub rho_star: f64,
    /// `eta(q*, rho*)`, zero up to the root tolerance.
    pub eta_at_star: f64,
    /// `sqrt(kappa) q*`.
    pub normalized_margin: f64,
    pub iterations: usize,
}

/// The margin equations at one `(law of V, kappa)`.
pub struct SvmSystem {
    pub noise: NoiseModelV,
    pub kappa: f64,
    labels: Option<LabelProbability>,
}

impl SvmSystem {
    pub fn new(noise: NoiseModelV, kappa: f64, quad: &QuadratureSpec) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        let labels = match noise.model {
            ModelKind::Logistic => Some(LabelProbability::new(noise.s, noise.sigma, quad)?),
            ModelKind::GaussianMixture => None,
        };
        Ok(Self {
            noise,
            kappa,
            labels,
        })
    }

    /// `eta(q, rho)`; the `H` integral is done in closed form.
    pub fn eta(&self, q: f64, rho: f64) -> f64 {
        let c = 1.0 / q;
        let rho = rho.clamp(-1.0, 1.0);
        let e2 = 1.0 - rho * rho;
        let mean = match &self.labels {
            None => truncated_second_moment(rho * self.noise.s - c),
            Some(labels) => {
                if rho == 0.0 {
                    truncated_second_moment(-c)
                } else if e2 == 0.0 {
                    labels.expect_v_near(|v| (rho * v - c).min(0.0).powi(2), c / rho, 0.0)
                } else {
                    let e = e2.sqrt();
                    labels.expect_v_near(
                        |v| e2 * truncated_second_moment((rho * v - c) / e),
                        c / rho,
                        e / rho.abs(),
                    )
                }
            }
        };
        mean - e2 * self.kappa
    }

    /// `eta(q, rho)` by kink-split quadrature over `(H, V)`.
    pub fn eta_quadrature(&self, q: f64, rho: f64, hv: &HvQuadrature) -> Result<f64> {
        let c = 1.0 / q;
        let e = (1.0 - rho * rho).max(0.0).sqrt();
        let mean = if e == 0.0 {
            hv.v.expect(|v| (rho * v - c).min(0.0).powi(2))
        } else {
            hv.expect_with_kink(
                |h, v| (rho * v + e * h - c).min(0.0).powi(2),
                |v| (c - rho * v) / e,
            )?
        };
        Ok(mean - (1.0 - rho * rho) * self.kappa)
    }

    /// `(min_rho eta(q, rho), argmin)`.
    pub fn eta_bar(&self, q: f64, cfg: &SvmTheoryConfig) -> (f64, f64) {
        let (rho, value) =
            scan_then_golden(|r| self.eta(q, r), -1.0, 1.0, cfg.scan_points, cfg.rho_tol);
        (value, rho)
    }

    pub fn solve(&self, cfg: &SvmTheoryConfig) -> Result<SvmSolution> {
        let mut evaluations = 0usize;
        let mut f = |log_q: f64| {
            evaluations += 1;
            self.eta_bar(log_q.exp(), cfg).0
        };
        // eta_bar decreases in q, from +inf at q -> 0.
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        let f0 = f(0.0);
        if f0 > 0.0 {
            while f(hi) > 0.0 {
                lo = hi;
                hi += 1.0;
                if hi > 40.0 {
                    return Err(Error::BracketFailure(format!(
                        "eta_bar stays positive up to q = e^40 at kappa={}",
                        self.kappa
                    )));
                }
            }
        } else {
            while f(lo) <= 0.0 {
                hi = lo;
                lo -= 1.0;
                if lo < -40.0 {
                    return Err(Error::BracketFailure(
                        "eta_bar stays non-positive down to q = e^-40".into(),
                    ));
                }
            }
        }
        let log_q = brent(&mut f, lo, hi, cfg.q_rel_tol, 200)?;
        let q_star = log_q.exp();
        let (eta_at_star, rho_star) = self.eta_bar(q_star, cfg);
        Ok(SvmSolution {
            q_star,
            rho_star,
            eta_at_star,
            normalized_margin: self.kappa.sqrt() * q_star,
            iterations: evaluations,
        })
    }
}

/// Solve the margin equations at `kappa`, which must lie above
/// `kappa* + margin`.
pub fn solve_svm(
    model: &DataModelSpec,
    profile: &impl SignalProfile,
    kappa: f64,
    quad: &QuadratureSpec,
    cfg: &SvmTheoryConfig,
) -> Result<SvmSolution> {
    let kappa_star = solve_kappa_star(model, profile, quad)?.kappa_star;
    solve_svm_above(model, profile, kappa, kappa_star, quad, cfg)
}

/// [`solve_svm`] with a precomputed threshold.
pub fn solve_svm_above(
    model: &DataModelSpec,
    profile: &impl SignalProfile,
    kappa: f64,
    kappa_star: f64,
    quad: &QuadratureSpec,
    cfg: &SvmTheoryConfig,
) -> Result<SvmSolution> {
    if !(kappa > kappa_star + cfg.threshold_margin) {
        return Err(Error::NotInRegime {
            kappa,
            kappa_star,
            margin: cfg.threshold_margin,
            regime: "max-margin",
        });
    }
    let noise = noise_at(model, profile, kappa)?;
    SvmSystem::new(noise, kappa, quad)?.solve(cfg)
}

/// Predicted risk and cosine similarity of the max-margin classifier.
pub fn svm_predictions(
    sol: &SvmSolution,
    model: &DataModelSpec,
    noise: &NoiseModelV,
    quad: &QuadratureSpec,
) -> Result<Predictions> {
    let risk = noise.direction_risk(sol.rho_star, quad)?;
    Ok(Predictions {
        risk,
        excess: risk - best_risk(model, quad)?,
        cosine: sol.rho_star * noise.s / noise.r,
    })
}
