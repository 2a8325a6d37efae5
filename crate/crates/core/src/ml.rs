//! Limiting behaviour of the maximum-likelihood (logistic regression)
//! estimate below the interpolation threshold.
//!
//! The estimate behaves like `mu * beta0 / s + alpha * (independent noise
//! direction)`, where `(mu, alpha, lambda)` solve
//!
//! ```text
//! 0                = E[ V loss'(prox(alpha H + mu V; lambda)) ]
//! alpha^2 kappa    = lambda^2 E[ loss'(prox(...))^2 ]
//! kappa            = E[ lambda loss'' / (1 + lambda loss'') ](prox(...))
//! ```
//!
//! The system is solved by damped Gauss–Seidel sweeps: `lambda` from the
//! third equation, then `mu` from the first, then `alpha` from the second.
//! Anderson mixing over the damped sweep keeps the iteration count bounded
//! as `kappa` approaches the threshold.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{best_risk, noise_at, SignalProfile};
use crate::gaussian::{
    logistic_normal_moments, GaussRule, NoiseModelV, QuadratureSpec, VLaw, TRUNCATION,
};
use crate::logistic::{prox_value, sigmoid};
use crate::model::{DataModelSpec, ModelKind};
use crate::phase::solve_kappa_star;
use crate::roots::solve_increasing;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlConfig {
    /// Starting point `(mu, alpha, lambda)`.
    pub init: [f64; 3],
    /// Fraction of each Gauss–Seidel proposal that is applied.
    pub damping: f64,
    pub max_iter: usize,
    /// Largest relative change per sweep, `|dx| / max(1, |x|)`, at
    /// convergence.
    pub step_tol: f64,
    /// Largest absolute residual at convergence.
    pub residual_tol: f64,
    /// Points with `kappa > kappa* - threshold_margin` are rejected.
    pub threshold_margin: f64,
    /// Past iterates used for Anderson mixing; 0 gives plain damped sweeps.
    pub anderson_memory: usize,
}

impl Default for MlConfig {
    fn default() -> Self {
        Self {
            init: [1.0, 1.0, 1.0],
            damping: 0.5,
            max_iter: 10_000,
            step_tol: 1e-9,
            residual_tol: 1e-6,
            threshold_margin: 1e-3,
            anderson_memory: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlSolution {
    pub mu: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub residuals: [f64; 3],
    pub iterations: usize,
    pub converged: bool,
}

/// Expectations needed by one evaluation of the system.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    /// `E[V loss'(p)]`
    v_d1: f64,
    /// `E[loss'(p)^2]`
    d1_sq: f64,
    /// `E[loss''(p) / (1 + lambda loss''(p))]`
    ratio: f64,
    /// derivative of `v_d1` in `mu`
    v_d1_dmu: f64,
    /// derivative of `lambda * ratio` in `lambda`
    lambda_ratio_dlambda: f64,
}

/// Per-node quantities at `x = alpha h + mu v`.
#[inline]
fn node(x: f64, lambda: f64) -> (f64, f64, f64) {
    let p = prox_value(x, lambda);
    let sp = sigmoid(p);
    let sm = 1.0 - sp;
    let d1 = -sm;
    let d2 = sp * sm;
    let d3 = d2 * (sm - sp);
    (d1, d2, d3)
}

/// The ML system at one `(law of V, kappa)`.
pub struct MlSystem {
    pub noise: NoiseModelV,
    pub kappa: f64,
    quad: QuadratureSpec,
    hermite: GaussRule,
    panel: GaussRule,
    /// Logistic model: weights along `X = mu V + alpha H` for the most
    /// recent `(mu, alpha)`.
    cached: RefCell<Option<Rc<DirectionWeights>>>,
}

/// Logistic model, fixed `(mu, alpha)`. With `tau = |(mu, alpha)|` and
/// `X = tau U`, `U ~ N(0, 1)`,
/// `E[k(V) F(X)] = E_U[c_k(U) F(tau U)]` where `c_k(U) = E[2 p(G) k(G) | U]`
/// for `k(v) = 1, v, v^2` and `p` the label probability. Each `c_k` is a
/// combination of `E sigmoid^(j)(N(s a U, t^2))`, `a = mu / tau`,
/// `t^2 = s^2 (alpha / tau)^2 + sigma^2`.
struct DirectionWeights {
    mu: f64,
    alpha: f64,
    tau: f64,
    x: Vec<f64>,
    c0: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
}

impl MlSystem {
    pub fn new(noise: NoiseModelV, kappa: f64, quad: &QuadratureSpec) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa must lie in (0, 1), got {kappa}"
            )));
        }
        Ok(Self {
            noise,
            kappa,
            quad: *quad,
            hermite: quad.hermite()?,
            panel: quad.panel_rule()?,
            cached: RefCell::new(None),
        })
    }

    /// Rule for `E f(Z)` when `f(Z) = F(scale Z)` and `F` varies on a unit
    /// scale.
    fn h_rule(&self, scale: f64) -> GaussRule {
        if scale <= 1.0 {
            self.hermite.clone()
        } else {
            self.panel
                .normal_panels(-TRUNCATION, TRUNCATION, 2.0 / scale)
        }
    }

    fn direction_weights(&self, mu: f64, alpha: f64) -> Rc<DirectionWeights> {
        if let Some(w) = self.cached.borrow().as_ref() {
            if w.mu == mu && w.alpha == alpha {
                return w.clone();
            }
        }
        let (s, sigma) = (self.noise.s, self.noise.sigma);
        let tau = mu.hypot(alpha);
        let (a, b) = (mu / tau, alpha / tau);
        let t = (s * s * b * b + sigma * sigma).sqrt();
        // Panels resolve both F(tau U) and the label factor in U.
        let label_scale = if s * a > 0.0 {
            2.0 * (1.0 + 3.0 * t * t / (std::f64::consts::PI * std::f64::consts::PI)).sqrt()
                / (s * a)
        } else {
            f64::INFINITY
        };
        let width = (2.0 / tau).min(label_scale).min(1.0);
        let rule = self.panel.normal_panels(-TRUNCATION, TRUNCATION, width);
        let n = rule.len();
        let mut w = DirectionWeights {
            mu,
            alpha,
            tau,
            x: Vec::with_capacity(n),
            c0: Vec::with_capacity(n),
            c1: Vec::with_capacity(n),
            c2: Vec::with_capacity(n),
        };
        for (&u, &wt) in rule.nodes.iter().zip(&rule.weights) {
            let (l0, l1, l2) = logistic_normal_moments(s * a * u, t, &self.panel);
            w.x.push(tau * u);
            w.c0.push(2.0 * wt * l0);
            w.c1.push(2.0 * wt * (a * u * l0 + b * b * s * l1));
            w.c2.push(
                2.0 * wt
                    * (a * a * u * u * l0
                        + 2.0 * a * u * b * b * s * l1
                        + b * b * l0
                        + b.powi(4) * s * s * l2),
            );
        }
        let w = Rc::new(w);
        *self.cached.borrow_mut() = Some(w.clone());
        w
    }

    fn moments_logistic(&self, mu: f64, alpha: f64, lambda: f64) -> Moments {
        let w = self.direction_weights(mu, alpha);
        debug_assert!(w.tau > 0.0);
        let mut m = Moments::default();
        for i in 0..w.x.len() {
            let (d1, d2, d3) = node(w.x[i], lambda);
            let k = 1.0 / (1.0 + lambda * d2);
            m.v_d1 += w.c1[i] * d1;
            m.d1_sq += w.c0[i] * d1 * d1;
            m.ratio += w.c0[i] * d2 * k;
            m.v_d1_dmu += w.c2[i] * d2 * k;
            m.lambda_ratio_dlambda += w.c0[i] * (-d3 * d1 * k - d2 * d2) * k * k;
        }
        m.lambda_ratio_dlambda = m.ratio + lambda * m.lambda_ratio_dlambda;
        m
    }

    fn moments(&self, mu: f64, alpha: f64, lambda: f64) -> Result<Moments> {
        let m = match self.noise.model {
            ModelKind::Logistic => self.moments_logistic(mu, alpha, lambda),
            ModelKind::GaussianMixture => self.moments_mixture(mu, alpha, lambda)?,
        };
        let vals = [m.v_d1, m.d1_sq, m.ratio, m.v_d1_dmu, m.lambda_ratio_dlambda];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIntegrand { h: alpha, v: mu });
        }
        Ok(m)
    }

    /// Tensor quadrature over `(H, V)`.
    fn moments_two_dim(&self, mu: f64, alpha: f64, lambda: f64, law: &VLaw) -> Result<Moments> {
        let h_rule = self.h_rule(alpha);
        let mut m = Moments::default();
        for (&v, &wv) in law.values.iter().zip(&law.weights) {
            let mut acc = Moments::default();
            for (&h, &wh) in h_rule.nodes.iter().zip(&h_rule.weights) {
                let (d1, d2, d3) = node(alpha * h + mu * v, lambda);
                let k = 1.0 / (1.0 + lambda * d2);
                acc.v_d1 += wh * d1;
                acc.d1_sq += wh * d1 * d1;
                acc.ratio += wh * d2 * k;
                acc.v_d1_dmu += wh * d2 * k;
                acc.lambda_ratio_dlambda += wh * (-d3 * d1 * k - d2 * d2) * k * k;
            }
            m.v_d1 += wv * v * acc.v_d1;
            m.d1_sq += wv * acc.d1_sq;
            m.ratio += wv * acc.ratio;
            m.v_d1_dmu += wv * v * v * acc.v_d1_dmu;
            m.lambda_ratio_dlambda += wv * acc.lambda_ratio_dlambda;
        }
        m.lambda_ratio_dlambda = m.ratio + lambda * m.lambda_ratio_dlambda;
        Ok(m)
    }

    /// Mixture model: `X = mu V + alpha H ~ N(mu s, tau^2)` with
    /// `tau^2 = mu^2 + alpha^2`, and `E[V | X]`, `E[V^2 | X]` in closed form.
    fn moments_mixture(&self, mu: f64, alpha: f64, lambda: f64) -> Result<Moments> {
        let s = self.noise.s;
        let tau = mu.hypot(alpha);
        let rule = self.h_rule(tau);
        let cond_var = if tau > 0.0 {
            (alpha / tau).powi(2)
        } else {
            1.0
        };
        let slope = if tau > 0.0 { mu / tau } else { 0.0 };
        let mut m = Moments::default();
        for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
            let (d1, d2, d3) = node(mu * s + tau * z, lambda);
            let k = 1.0 / (1.0 + lambda * d2);
            let v_mean = s + slope * z;
            m.v_d1 += w * v_mean * d1;
            m.d1_sq += w * d1 * d1;
            m.ratio += w * d2 * k;
            m.v_d1_dmu += w * (cond_var + v_mean * v_mean) * d2 * k;
            m.lambda_ratio_dlambda += w * (-d3 * d1 * k - d2 * d2) * k * k;
        }
        m.lambda_ratio_dlambda = m.ratio + lambda * m.lambda_ratio_dlambda;
        Ok(m)
    }

    fn residuals_from(&self, m: &Moments, alpha: f64, lambda: f64) -> [f64; 3] {
        [
            m.v_d1,
            lambda * lambda * m.d1_sq - alpha * alpha * self.kappa,
            lambda * m.ratio - self.kappa,
        ]
    }

    /// Residuals of the three equations (production quadrature).
    pub fn residuals(&self, mu: f64, alpha: f64, lambda: f64) -> Result<[f64; 3]> {
        check_point(mu, alpha, lambda)?;
        let m = self.moments(mu, alpha, lambda)?;
        Ok(self.residuals_from(&m, alpha, lambda))
    }

    /// Residuals by tensor quadrature over `(H, V)` for either model; for the
    /// mixture this bypasses the one-dimensional reduction.
    pub fn residuals_two_dim(&self, mu: f64, alpha: f64, lambda: f64) -> Result<[f64; 3]> {
        check_point(mu, alpha, lambda)?;
        let scale = mu.max(alpha);
        let factor = if scale <= 1.0 { 1.0 } else { 0.5 / scale };
        let law = VLaw::with_refinement(&self.noise, &self.quad, factor)?;
        let m = self.moments_two_dim(mu, alpha, lambda, &law)?;
        Ok(self.residuals_from(&m, alpha, lambda))
    }

    /// One undamped Gauss–Seidel pass from `(mu, alpha, lambda)`.
    pub fn sweep(&self, point: [f64; 3]) -> Result<[f64; 3]> {
        let [mu, alpha, lambda] = point;
        check_point(mu, alpha, lambda)?;
        let kappa = self.kappa;
        let lambda_new = solve_increasing(
            |l| {
                let m = self.moments(mu, alpha, l)?;
                Ok((l * m.ratio - kappa, m.lambda_ratio_dlambda))
            },
            lambda,
            0.0,
            1e-14,
        )?;
        let mu_new = solve_increasing(
            |u| {
                let m = self.moments(u, alpha, lambda_new)?;
                Ok((m.v_d1, m.v_d1_dmu))
            },
            mu.max(1e-3),
            0.0,
            1e-14,
        )?;
        let m = self.moments(mu_new, alpha, lambda_new)?;
        let alpha_new = lambda_new * (m.d1_sq / kappa).sqrt();
        Ok([mu_new, alpha_new, lambda_new])
    }

    /// Damped Gauss–Seidel iteration, optionally with Anderson mixing of the
    /// damped map.
    pub fn solve(&self, cfg: &MlConfig) -> Result<MlSolution> {
        let mut x = cfg.init;
        check_point(x[0], x[1], x[2])?;
        let theta = cfg.damping;
        let mut mixer = Anderson::new(cfg.anderson_memory);
        let mut fallback: Option<[f64; 3]> = None;
        let mut residuals = [f64::NAN; 3];
        for it in 1..=cfg.max_iter {
            let proposal = match self.sweep(x) {
                Ok(p) => p,
                Err(e) => match fallback.take() {
                    // The extrapolated point was unusable: restart plainly.
                    Some(prev) => {
                        mixer.clear();
                        x = prev;
                        continue;
                    }
                    None => return Err(e),
                },
            };
            let change = (0..3)
                .map(|i| (proposal[i] - x[i]).abs() / x[i].abs().max(1.0))
                .fold(0.0, f64::max);
            let damped: [f64; 3] = std::array::from_fn(|i| x[i] + theta * (proposal[i] - x[i]));
            if change <= cfg.step_tol {
                residuals = self.residuals(damped[0], damped[1], damped[2])?;
                if residuals.iter().all(|r| r.abs() <= cfg.residual_tol) {
                    return Ok(MlSolution {
                        mu: damped[0],
                        alpha: damped[1],
                        lambda: damped[2],
                        residuals,
                        iterations: it,
                        converged: true,
                    });
                }
            }
            let next = mixer.next(x, damped);
            if next == damped {
                fallback = None;
                x = damped;
            } else if next.iter().all(|v| v.is_finite() && *v > 0.0) {
                fallback = Some(damped);
                x = next;
            } else {
                mixer.clear();
                fallback = None;
                x = damped;
            }
        }
        if residuals[0].is_nan() {
            residuals = self.residuals(x[0], x[1], x[2])?;
        }
        Err(Error::MlNoConvergence(Box::new(MlSolution {
            mu: x[0],
            alpha: x[1],
            lambda: x[2],
            residuals,
            iterations: cfg.max_iter,
            converged: false,
        })))
    }
}

/// Anderson mixing for a fixed-point map on three unknowns.
struct Anderson {
    memory: usize,
    /// `(x_k, g(x_k) - x_k, g(x_k))`
    history: Vec<([f64; 3], [f64; 3], [f64; 3])>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Self {
            memory,
            history: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.history.clear();
    }

    /// Next iterate given the current point and its image.
    fn next(&mut self, x: [f64; 3], gx: [f64; 3]) -> [f64; 3] {
        if self.memory == 0 {
            return gx;
        }
        let f: [f64; 3] = std::array::from_fn(|i| gx[i] - x[i]);
        self.history.push((x, f, gx));
        if self.history.len() > self.memory + 1 {
            self.history.remove(0);
        }
        let m = self.history.len() - 1;
        if m == 0 {
            return gx;
        }
        // Differences of residuals and images against the newest entry.
        let df: Vec<[f64; 3]> = (0..m)
            .map(|j| std::array::from_fn(|i| f[i] - self.history[j].1[i]))
            .collect();
        let dg: Vec<[f64; 3]> = (0..m)
            .map(|j| std::array::from_fn(|i| gx[i] - self.history[j].2[i]))
            .collect();
        // Least squares min |f - DF gamma| through the normal equations.
        let mut a = vec![vec![0.0; m + 1]; m];
        for r in 0..m {
            for c in 0..m {
                a[r][c] = (0..3).map(|i| df[r][i] * df[c][i]).sum();
            }
            a[r][m] = (0..3).map(|i| df[r][i] * f[i]).sum();
        }
        let scale = (0..m).map(|r| a[r][r]).fold(0.0, f64::max);
        for (r, row) in a.iter_mut().enumerate() {
            row[r] += 1e-12 * scale;
        }
        let Some(gamma) = solve_dense(a) else {
            self.history.clear();
            return gx;
        };
        std::array::from_fn(|i| gx[i] - (0..m).map(|j| gamma[j] * dg[j][i]).sum::<f64>())
    }
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot = &top[col];
        for row in rest {
            let factor = row[col] / pivot[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *x -= factor * p;
            }
        }
    }
    let mut out = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * out[k]).sum();
        out[row] = (a[row][n] - tail) / a[row][row];
    }
    Some(out)
}

fn check_point(mu: f64, alpha: f64, lambda: f64) -> Result<()> {
    if !(mu >= 0.0 && alpha > 0.0 && lambda > 0.0)
        || !(mu.is_finite() && alpha.is_finite() && lambda.is_finite())
    {
        return Err(Error::InvalidParameter(format!(
            "need mu >= 0, alpha > 0, lambda > 0; got ({mu}, {alpha}, {lambda})"
        )));
    }
    Ok(())
}

/// Residuals of the ML system at `(mu, alpha, lambda)`.
pub fn ml_residuals(
    noise: &NoiseModelV,
    kappa: f64,
    point: [f64; 3],
    quad: &QuadratureSpec,
) -> Result<[f64; 3]> {
    MlSystem::new(*noise, kappa, quad)?.residuals(point[0], point[1], point[2])
}

/// Solve the ML system at `kappa`, which must lie below `kappa* - margin`.
pub fn solve_ml(
    model: &DataModelSpec,
    profile: &impl SignalProfile,
    kappa: f64,
    quad: &QuadratureSpec,
    cfg: &MlConfig,
) -> Result<MlSolution> {
    let kappa_star = solve_kappa_star(model, profile, quad)?.kappa_star;
    solve_ml_below(model, profile, kappa, kappa_star, quad, cfg)
}

/// [`solve_ml`] with a precomputed threshold.
pub fn solve_ml_below(
    model: &DataModelSpec,
    profile: &impl SignalProfile,
    kappa: f64,
    kappa_star: f64,
    quad: &QuadratureSpec,
    cfg: &MlConfig,
) -> Result<MlSolution> {
    if !(kappa < kappa_star - cfg.threshold_margin) {
        return Err(Error::NotInRegime {
            kappa,
            kappa_star,
            margin: cfg.threshold_margin,
            regime: "maximum-likelihood",
        });
    }
    let noise = noise_at(model, profile, kappa)?;
    MlSystem::new(noise, kappa, quad)?.solve(cfg)
}

/// Risk, excess risk and cosine similarity of a linear rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub risk: f64,
    pub excess: f64,
    pub cosine: f64,
}

/// Predicted test risk and cosine similarity of the ML estimate.
pub fn ml_predictions(
    sol: &MlSolution,
    model: &DataModelSpec,
    noise: &NoiseModelV,
    quad: &QuadratureSpec,
) -> Result<Predictions> {
    let c = sol.mu / sol.mu.hypot(sol.alpha);
    let risk = noise.direction_risk(c, quad)?;
    Ok(Predictions {
        risk,
        excess: risk - best_risk(model, quad)?,
        cosine: noise.s * c / noise.r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{normal_tail, HvQuadrature};
    use crate::logistic::{loss_d1, loss_d2, prox_logistic};

    fn q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn residuals_match_generic_expectations() {
        // Oracle: evaluate the three expectations with the general-purpose
        // (H, V) quadrature and the checked prox.
        for model in [ModelKind::Logistic, ModelKind::GaussianMixture] {
            let noise = NoiseModelV::new(model, 1.2, 3.0).unwrap();
            let (mu, alpha, lambda, kappa) = (0.7, 0.9, 0.4, 0.1);
            let hv = HvQuadrature::new(&noise, &q()).unwrap();
            let p = |h: f64, v: f64| prox_logistic(alpha * h + mu * v, lambda).unwrap().value;
            let e1 = hv.expect(|h, v| v * loss_d1(p(h, v))).unwrap();
            let e2 = hv.expect(|h, v| loss_d1(p(h, v)).powi(2)).unwrap();
            let e3 = hv
                .expect(|h, v| {
                    let d2 = loss_d2(p(h, v));
                    d2 / (1.0 + lambda * d2)
                })
                .unwrap();
            let expected = [
                e1,
                lambda * lambda * e2 - alpha * alpha * kappa,
                lambda * e3 - kappa,
            ];
            let got = ml_residuals(&noise, kappa, [mu, alpha, lambda], &q()).unwrap();
            for i in 0..3 {
                assert!(
                    (got[i] - expected[i]).abs() < 1e-10,
                    "{model:?} eq{i}: {} vs {}",
                    got[i],
                    expected[i]
                );
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for model in [ModelKind::Logistic, ModelKind::GaussianMixture] {
            let noise = NoiseModelV::new(model, 1.5, 2.5).unwrap();
            let sys = MlSystem::new(noise, 0.1, &q()).unwrap();
            let (mu, alpha, lambda) = (0.5, 0.8, 0.3);
            let m = sys.moments(mu, alpha, lambda).unwrap();
            let h = 1e-6;
            let dmu = (sys.moments(mu + h, alpha, lambda).unwrap().v_d1
                - sys.moments(mu - h, alpha, lambda).unwrap().v_d1)
                / (2.0 * h);
            let lr = |l: f64| l * sys.moments(mu, alpha, l).unwrap().ratio;
            let dl = (lr(lambda + h) - lr(lambda - h)) / (2.0 * h);
            assert!((dmu - m.v_d1_dmu).abs() < 1e-7, "{model:?}");
            assert!((dl - m.lambda_ratio_dlambda).abs() < 1e-7, "{model:?}");
        }
    }

    #[test]
    fn logistic_reduction_matches_tensor_quadrature() {
        let noise = NoiseModelV::new(ModelKind::Logistic, 6.2, 10.0).unwrap();
        let sys = MlSystem::new(noise, 0.3, &q()).unwrap();
        for &(mu, alpha, lambda) in &[
            (0.5, 0.5, 0.5),
            (2.2, 2.6, 3.9),
            (10.8, 16.0, 40.3),
            (0.05, 4.0, 2.0),
        ] {
            let a = sys.residuals(mu, alpha, lambda).unwrap();
            let b = sys.residuals_two_dim(mu, alpha, lambda).unwrap();
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-8, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn mixture_reduction_matches_tensor_quadrature() {
        let noise = NoiseModelV::new(ModelKind::GaussianMixture, 1.0, 3.0).unwrap();
        let sys = MlSystem::new(noise, 0.2, &q()).unwrap();
        for &(mu, alpha, lambda) in &[(0.5, 0.5, 0.5), (2.0, 1.5, 3.0), (0.1, 3.0, 0.05)] {
            let a = sys.residuals(mu, alpha, lambda).unwrap();
            let b = sys.residuals_two_dim(mu, alpha, lambda).unwrap();
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn mixture_solution_and_risk() {
        let model = DataModelSpec::gaussian_mixture(2.0).unwrap();
        let noise = model.noise(1.0).unwrap();
        let sys = MlSystem::new(noise, 0.1, &q()).unwrap();
        let sol = sys.solve(&MlConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.residuals.iter().all(|r| r.abs() <= 1e-6));
        let pred = ml_predictions(&sol, &model, &noise, &q()).unwrap();
        let c = sol.mu / sol.mu.hypot(sol.alpha);
        assert!((pred.risk - normal_tail(c * 1.0)).abs() < 1e-15);
        assert!(pred.excess > 0.0);
    }

    #[test]
    fn rejects_separable_regime() {
        let model = DataModelSpec::logistic(5.0).unwrap();
        let map = crate::FeatureMap::polynomial(5.0, 2.0).unwrap();
        let r = solve_ml(&model, &map, 0.45, &q(), &MlConfig::default());
        assert!(matches!(r, Err(Error::NotInRegime { .. })));
    }
}
