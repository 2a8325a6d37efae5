//! How much of the total signal a learner with `p = kappa n` features sees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{NoiseModelV, QuadratureSpec};
use crate::model::DataModelSpec;

/// Observed and unobserved signal strengths at some `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalStrength {
    pub s: f64,
    pub sigma: f64,
}

/// Anything that maps `kappa` to a split of the signal strength.
pub trait SignalProfile {
    fn strength(&self, kappa: f64) -> Result<SignalStrength>;

    /// Largest admissible `kappa`.
    fn kappa_max(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureMap {
    /// Uniform energy over `d = zeta n` coordinates:
    /// `s^2 = r^2 kappa / zeta` for `kappa in (0, zeta]`.
    Linear { r: f64, zeta: f64 },
    /// Energy decaying polynomially along coordinates:
    /// `s^2 = r^2 (1 - (1 + kappa)^(-gamma))` for `kappa > 0`.
    Polynomial { r: f64, gamma: f64 },
}

impl FeatureMap {
    pub fn linear(r: f64, zeta: f64) -> Result<Self> {
        let m = FeatureMap::Linear { r, zeta };
        m.validate()?;
        Ok(m)
    }

    pub fn polynomial(r: f64, gamma: f64) -> Result<Self> {
        let m = FeatureMap::Polynomial { r, gamma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.r();
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "r must be positive, got {r}"
            )));
        }
        match *self {
            FeatureMap::Linear { zeta, .. } if !(zeta >= 1.0 && zeta.is_finite()) => Err(
                Error::InvalidParameter(format!("zeta must be >= 1, got {zeta}")),
            ),
            FeatureMap::Polynomial { gamma, .. } if !(gamma > 0.0 && gamma.is_finite()) => Err(
                Error::InvalidParameter(format!("gamma must be positive, got {gamma}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn r(&self) -> f64 {
        match *self {
            FeatureMap::Linear { r, .. } | FeatureMap::Polynomial { r, .. } => r,
        }
    }

    pub fn domain(&self) -> String {
        match *self {
            FeatureMap::Linear { zeta, .. } => format!("(0, {zeta}]"),
            FeatureMap::Polynomial { .. } => "(0, inf)".to_string(),
        }
    }

    pub fn contains(&self, kappa: f64) -> bool {
        kappa > 0.0 && kappa <= self.kappa_max()
    }

    /// Nominal ambient dimension ratio `d / n`, when finite.
    pub fn zeta(&self) -> Option<f64> {
        match *self {
            FeatureMap::Linear { zeta, .. } => Some(zeta),
            FeatureMap::Polynomial { .. } => None,
        }
    }
}

impl SignalProfile for FeatureMap {
    fn strength(&self, kappa: f64) -> Result<SignalStrength> {
        if !self.contains(kappa) {
            return Err(Error::OutOfDomain {
                kappa,
                domain: self.domain(),
            });
        }
        let r = self.r();
        let s2 = match *self {
            FeatureMap::Linear { zeta, .. } => r * r * kappa / zeta,
            FeatureMap::Polynomial { gamma, .. } => r * r * -(-gamma * kappa.ln_1p()).exp_m1(),
        };
        let s2 = s2.clamp(0.0, r * r);
        Ok(SignalStrength {
            s: s2.sqrt(),
            sigma: (r * r - s2).max(0.0).sqrt(),
        })
    }

    fn kappa_max(&self) -> f64 {
        match *self {
            FeatureMap::Linear { zeta, .. } => zeta,
            FeatureMap::Polynomial { .. } => f64::INFINITY,
        }
    }
}

/// Bayes-optimal risk when every feature is observed:
/// `E f(-r |G|)` for the logistic model and `Q(r)` for the mixture.
pub fn best_risk(model: &DataModelSpec, quad: &QuadratureSpec) -> Result<f64> {
    model.validate()?;
    model.noise(model.r)?.direction_risk(1.0, quad)
}

/// Law of `V` at a given `kappa`.
pub fn noise_at(
    model: &DataModelSpec,
    profile: &impl SignalProfile,
    kappa: f64,
) -> Result<NoiseModelV> {
    let st = profile.strength(kappa)?;
    NoiseModelV::from_parts(model.kind, st.s, st.sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::normal_tail;
    use proptest::prelude::*;

    #[test]
    fn linear_map_values() {
        let m = FeatureMap::linear(10.0, 3.0).unwrap();
        let st = m.strength(1.5).unwrap();
        assert!((st.s * st.s - 50.0).abs() < 1e-12);
        assert!((st.sigma * st.sigma - 50.0).abs() < 1e-12);
        assert_eq!(m.strength(3.0).unwrap().sigma, 0.0);
        assert!(matches!(m.strength(3.1), Err(Error::OutOfDomain { .. })));
        assert!(matches!(m.strength(0.0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn polynomial_map_values() {
        let m = FeatureMap::polynomial(5.0, 2.0).unwrap();
        let st = m.strength(0.05).unwrap();
        assert!((st.s * st.s - 25.0 * (1.0 - 1.05f64.powi(-2))).abs() < 1e-12);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(FeatureMap::linear(1.0, 0.5).is_err());
        assert!(FeatureMap::polynomial(1.0, 0.0).is_err());
        assert!(FeatureMap::polynomial(-1.0, 1.0).is_err());
    }

    #[test]
    fn gm_best_risk_is_normal_tail() {
        let m = DataModelSpec::gaussian_mixture(2.0).unwrap();
        let b = best_risk(&m, &QuadratureSpec::default()).unwrap();
        assert_eq!(b, normal_tail(2.0));
    }

    proptest! {
        #[test]
        fn strength_is_monotone_and_bounded(
            r in 0.1f64..30.0, shape in 1.0f64..6.0, k in 1e-3f64..1.0, dk in 1e-4f64..1.0, poly in proptest::bool::ANY,
        ) {
            let m = if poly { FeatureMap::polynomial(r, shape).unwrap() } else { FeatureMap::linear(r, shape).unwrap() };
            let k2 = (k + dk).min(m.kappa_max());
            prop_assume!(k2 > k);
            let a = m.strength(k).unwrap();
            let b = m.strength(k2).unwrap();
            prop_assert!(b.s >= a.s);
            prop_assert!(a.s <= r && a.s > 0.0);
            prop_assert!((a.s * a.s + a.sigma * a.sigma - r * r).abs() < 1e-9 * r * r);
        }
    }
}
