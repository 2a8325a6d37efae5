//! Interpolation threshold: the value `kappa*` above which the training data
//! is linearly separable with high probability.
//!
//! `g(kappa) = min_t E (H + t V)_-^2` where `V` is drawn at the signal
//! strength of `kappa`; `kappa*` solves `g(kappa) = kappa`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{noise_at, SignalProfile};
use crate::gaussian::{truncated_second_moment, HvQuadrature, NoiseModelV, QuadratureSpec, VLaw};
use crate::model::{DataModelSpec, ModelKind};
use crate::roots::golden_min;

/// Lower end of the bracket searched for `kappa*`.
pub const KAPPA_LOW: f64 = 1e-4;
/// `g <= 1/2` always, so `kappa*` never exceeds this.
pub const KAPPA_HIGH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMin {
    /// Minimising `t`.
    pub t: f64,
    /// `min_t E (H + t V)_-^2`.
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub kappa_star: f64,
    pub g_at_star: f64,
    pub t_at_star: f64,
    /// Final bisection interval.
    pub bracket: (f64, f64),
    pub iterations: usize,
}

/// `E (H + t V)_-^2` for the mixture model in closed form:
/// `(1 + t^2) tsm(t s / sqrt(1 + t^2))`.
pub fn threshold_objective_gm(t: f64, s: f64) -> f64 {
    let a = (1.0 + t * t).sqrt();
    a * a * truncated_second_moment(t * s / a)
}

/// `E (H + t V)_-^2` with the `H` integral done exactly.
pub fn threshold_objective(t: f64, law: &VLaw) -> f64 {
    law.expect(|v| truncated_second_moment(t * v))
}

/// `E (H + t V)_-^2` by two-dimensional quadrature split at the kink.
pub fn threshold_objective_quadrature(t: f64, hv: &HvQuadrature) -> Result<f64> {
    hv.expect_with_kink(|h, v| (h + t * v).min(0.0).powi(2), |v| -t * v)
}

/// Minimise a convex objective over `t >= 0`.
fn minimise_over_t(mut f: impl FnMut(f64) -> f64) -> ThresholdMin {
    let mut hi = 1.0;
    while f(2.0 * hi) < f(hi) && hi < 1e8 {
        hi *= 2.0;
    }
    let (t, g) = golden_min(&mut f, 0.0, 2.0 * hi, 1e-11);
    let at_zero = f(0.0);
    if at_zero <= g {
        ThresholdMin { t: 0.0, g: at_zero }
    } else {
        ThresholdMin { t, g }
    }
}

/// `min_t E (H + t V)_-^2` for a given law of `V`.
///
/// The minimiser is non-negative because `E V >= 0`.
pub fn threshold_min(noise: &NoiseModelV, quad: &QuadratureSpec) -> Result<ThresholdMin> {
    match noise.model {
        ModelKind::GaussianMixture => Ok(minimise_over_t(|t| threshold_objective_gm(t, noise.s))),
        ModelKind::Logistic => {
            let law = VLaw::new(noise, quad)?;
            Ok(minimise_over_t(|t| threshold_objective(t, &law)))
        }
    }
}

/// Same minimisation with the objective evaluated by kink-split quadrature
/// over `(H, V)`, independent of the closed forms.
pub fn threshold_min_quadrature(
    noise: &NoiseModelV,
    quad: &QuadratureSpec,
) -> Result<ThresholdMin> {
    let hv = HvQuadrature::new(noise, quad)?;
    let mut err = None;
    let m = minimise_over_t(|t| match threshold_objective_quadrature(t, &hv) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(m),
    }
}

/// `g(kappa)`.
pub fn threshold_g(
    model: &DataModelSpec,
    profile: &impl SignalProfile,
    kappa: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    Ok(threshold_min(&noise_at(model, profile, kappa)?, quad)?.g)
}

/// Solve `g(kappa) = kappa` by bisection on `[1e-4, min(1/2, kappa_max)]`.
pub fn solve_kappa_star(
    model: &DataModelSpec,
    profile: &impl SignalProfile,
    quad: &QuadratureSpec,
) -> Result<PhaseResult> {
    let h = |k: f64| -> Result<(f64, ThresholdMin)> {
        let m = threshold_min(&noise_at(model, profile, k)?, quad)?;
        Ok((m.g - k, m))
    };
    let mut lo = KAPPA_LOW;
    let mut hi = KAPPA_HIGH.min(profile.kappa_max());
    let (h_lo, m_lo) = h(lo)?;
    let (h_hi, m_hi) = h(hi)?;
    // g is continuous and decreasing, so the root sits at an endpoint when
    // the difference vanishes there up to rounding.
    if h_hi.abs() <= 1e-12 {
        return Ok(PhaseResult {
            kappa_star: hi,
            g_at_star: m_hi.g,
            t_at_star: m_hi.t,
            bracket: (hi, hi),
            iterations: 0,
        });
    }
    if h_lo <= 0.0 || h_hi > 0.0 {
        return Err(Error::NoRoot { lo, hi });
    }
    let mut best = (lo, m_lo, h_lo.abs());
    let mut iterations = 0;
    while hi - lo > 1e-12 * hi.max(1e-3) && iterations < 200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let (hm, mm) = h(mid)?;
        if hm.abs() < best.2 {
            best = (mid, mm, hm.abs());
        }
        if hm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if hm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(PhaseResult {
        kappa_star: best.0,
        g_at_star: best.1.g,
        t_at_star: best.1.t,
        bracket: (lo, hi),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_map::FeatureMap;
    use crate::gaussian::{normal_pdf, normal_tail};

    #[test]
    fn gm_closed_form_matches_expanded_form() {
        // (1 + t^2 + t^2 s^2) Q(m) - t s sqrt(1 + t^2) phi(m), m = t s / sqrt(1 + t^2)
        for &(t, s) in &[(0.0, 1.0), (0.5, 2.0), (2.0, 0.3), (7.0, 3.0)] {
            let a = (1.0f64 + t * t).sqrt();
            let m = t * s / a;
            let expanded =
                (1.0 + t * t + t * t * s * s) * normal_tail(m) - t * s * a * normal_pdf(m);
            assert!((threshold_objective_gm(t, s) - expanded).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_signal_gives_one_half() {
        let noise = NoiseModelV::new(ModelKind::Logistic, 0.0, 2.0).unwrap();
        let m = threshold_min(&noise, &QuadratureSpec::default()).unwrap();
        assert!((m.g - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gm_threshold_matches_quadrature_route() {
        let q = QuadratureSpec::default();
        for &s in &[0.3, 1.0, 2.5] {
            let noise = NoiseModelV::new(ModelKind::GaussianMixture, s, 3.0).unwrap();
            let a = threshold_min(&noise, &q).unwrap();
            let b = threshold_min_quadrature(&noise, &q).unwrap();
            assert!((a.g - b.g).abs() < 1e-9, "s={s}: {} vs {}", a.g, b.g);
        }
    }

    #[test]
    fn kappa_star_is_fixed_point() {
        let q = QuadratureSpec::default();
        let model = DataModelSpec::logistic(5.0).unwrap();
        let map = FeatureMap::polynomial(5.0, 2.0).unwrap();
        let res = solve_kappa_star(&model, &map, &q).unwrap();
        let g = threshold_g(&model, &map, res.kappa_star, &q).unwrap();
        assert!((g - res.kappa_star).abs() < 1e-9);
        assert!(res.kappa_star > 0.0 && res.kappa_star <= 0.5);
    }
}
