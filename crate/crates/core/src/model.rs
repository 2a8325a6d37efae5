use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::NoiseModelV;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `y ~ Rad(sigmoid(x' eta0))`, `x ~ N(0, I)`.
    Logistic,
    /// `x | y ~ N(y eta0, I)`, `y = ±1`.
    #[serde(rename = "gm", alias = "gaussian_mixture")]
    GaussianMixture,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "logistic",
            ModelKind::GaussianMixture => "gm",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "gm" | "gaussian_mixture" => Ok(ModelKind::GaussianMixture),
            _ => Err(Error::InvalidParameter(format!("unknown model '{s}'"))),
        }
    }
}

/// Data-generating model with total signal strength `r = ||eta0||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataModelSpec {
    pub kind: ModelKind,
    pub r: f64,
    /// Probability of `y = +1` (Gaussian mixture only; fixed at 1/2).
    #[serde(default = "half")]
    pub prior_plus: f64,
}

fn half() -> f64 {
    0.5
}

impl DataModelSpec {
    pub fn new(kind: ModelKind, r: f64) -> Result<Self> {
        let m = Self {
            kind,
            r,
            prior_plus: 0.5,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn logistic(r: f64) -> Result<Self> {
        Self::new(ModelKind::Logistic, r)
    }

    pub fn gaussian_mixture(r: f64) -> Result<Self> {
        Self::new(ModelKind::GaussianMixture, r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "r must be positive, got {}",
                self.r
            )));
        }
        if self.prior_plus != 0.5 {
            return Err(Error::InvalidParameter(format!(
                "only balanced classes are supported, got prior_plus={}",
                self.prior_plus
            )));
        }
        Ok(())
    }

    /// Law of `V` when the learner sees signal strength `s`.
    pub fn noise(&self, s: f64) -> Result<NoiseModelV> {
        NoiseModelV::new(self.kind, s, self.r)
    }
}
