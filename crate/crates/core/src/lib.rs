//! Exact asymptotic predictions and finite-size simulations for binary linear
//! classification with a partially observed feature vector.
//!
//! Two data models are supported: labels drawn from a logistic link on
//! Gaussian features, and a symmetric two-component Gaussian mixture. The
//! learner sees only the first `p` of `d` features. As `n, p, d` grow with
//! `p/n -> kappa`, gradient descent on the logistic loss converges either to
//! the maximum-likelihood estimate (non-separable data) or, in direction, to
//! the hard-margin SVM (separable data). This crate computes
//!
//! * the interpolation threshold `kappa*` separating the two regimes
//!   ([`phase`]),
//! * the limiting risk and cosine similarity of the ML estimate ([`ml`]) and
//!   of the max-margin classifier ([`svm`]),
//!
//! and checks them against Monte Carlo simulations ([`datagen`],
//! [`trainers`], [`experiment`]).

// `!(x > 0.0)` style guards are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod experiment;
pub mod feature_map;
pub mod gaussian;
pub mod logistic;
pub mod ml;
pub mod model;
pub mod phase;
pub mod roots;
pub mod svm;
pub mod trainers;

pub use error::{Error, Result};
pub use feature_map::{best_risk, FeatureMap, SignalProfile, SignalStrength};
pub use gaussian::{NoiseModelV, QuadratureSpec};
pub use model::{DataModelSpec, ModelKind};
