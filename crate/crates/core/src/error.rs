use crate::ml::MlSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite integrand value at h={h}, v={v}")]
    NonFiniteIntegrand { h: f64, v: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kappa={kappa} is outside the feature-map domain {domain}")]
    OutOfDomain { kappa: f64, domain: String },

    #[error("{what}: no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The fixed-point iteration for the ML system hit its iteration cap. The
    /// last iterate is attached.
    #[error("ML system did not converge after {} iterations (residuals {:?})", .0.iterations, .0.residuals)]
    MlNoConvergence(Box<MlSolution>),

    #[error("bracket search failed: {0}")]
    BracketFailure(String),

    #[error("g(kappa) - kappa has no sign change on [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("kappa={kappa} is not in the {regime} regime (kappa*={kappa_star}, margin {margin})")]
    NotInRegime {
        kappa: f64,
        kappa_star: f64,
        margin: f64,
        regime: &'static str,
    },

    #[error("training set needs p >= 1 (n={n}, kappa={kappa} gives p={p})")]
    BadShape { n: usize, kappa: f64, p: usize },

    #[error("weight vector is zero")]
    ZeroVector,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
