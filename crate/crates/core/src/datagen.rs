//! Synthetic training sets with the first `p = round(kappa n)` features
//! observed.
//!
//! Only the observed block is materialised: the true direction is taken as
//! `beta0 = s e_1` within the observed coordinates, and the unobserved part of
//! the logistic score is a single `N(0, sigma^2)` draw per sample.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{FeatureMap, SignalProfile};
use crate::logistic::sigmoid;
use crate::model::{DataModelSpec, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub n: usize,
    pub p: usize,
    /// Nominal ambient dimension `round(zeta n)` for the linear map; the
    /// polynomial map has no finite one.
    pub d: Option<usize>,
    pub s: f64,
    pub sigma: f64,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone)]
pub struct TrainSet {
    /// `n x p`, row `i` is the observed feature vector of sample `i`.
    pub features: Array2<f64>,
    /// Labels in `{-1, +1}`.
    pub labels: Vec<f64>,
    pub meta: TrainMeta,
}

/// `p = round(kappa n)` with ties to even.
pub fn feature_count(n: usize, kappa: f64) -> usize {
    (kappa * n as f64).round_ties_even().max(0.0) as usize
}

/// Random stream for trial `trial` at grid index `kappa_index`.
pub fn trial_stream(kappa_index: usize, trial: usize) -> u64 {
    ((kappa_index as u64) << 32) | trial as u64
}

/// Draw a training set on stream 0 of `seed`.
pub fn generate(
    model: &DataModelSpec,
    map: &FeatureMap,
    n: usize,
    kappa: f64,
    seed: u64,
) -> Result<TrainSet> {
    generate_stream(model, map, n, kappa, seed, 0)
}

/// Draw a training set from the ChaCha8 stream `(seed, stream)`.
///
/// Per sample the draws are, in order: the `p` feature noises, then for the
/// logistic model the unobserved-score noise and a uniform for the label, or
/// for the mixture a uniform for the label before the feature noises.
pub fn generate_stream(
    model: &DataModelSpec,
    map: &FeatureMap,
    n: usize,
    kappa: f64,
    seed: u64,
    stream: u64,
) -> Result<TrainSet> {
    model.validate()?;
    let p = feature_count(n, kappa);
    if n == 0 || p == 0 {
        return Err(Error::BadShape { n, kappa, p });
    }
    let st = map.strength(kappa)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut features = Array2::<f64>::zeros((n, p));
    let mut labels = Vec::with_capacity(n);
    for mut row in features.rows_mut() {
        match model.kind {
            ModelKind::Logistic => {
                for x in row.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let hidden: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.random();
                let y = if u < sigmoid(st.s * row[0] + st.sigma * hidden) {
                    1.0
                } else {
                    -1.0
                };
                labels.push(y);
            }
            ModelKind::GaussianMixture => {
                let u: f64 = rng.random();
                let y = if u < model.prior_plus { 1.0 } else { -1.0 };
                for x in row.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                row[0] += y * st.s;
                labels.push(y);
            }
        }
    }
    Ok(TrainSet {
        features,
        labels,
        meta: TrainMeta {
            n,
            p,
            d: map.zeta().map(|z| (z * n as f64).round() as usize),
            s: st.s,
            sigma: st.sigma,
            seed,
            stream,
        },
    })
}

impl TrainSet {
    /// Write `y,w_1,...,w_p` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = std::iter::once("y".to_string())
            .chain((1..=self.meta.p).map(|j| format!("w_{j}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (y, row) in self.labels.iter().zip(self.features.rows()) {
            write!(out, "{y}")?;
            for x in row {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}
