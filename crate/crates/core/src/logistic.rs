//! Logistic loss, its derivatives, proximal operator and Moreau envelope.

use crate::error::{Error, Result};

/// `1 / (1 + exp(-x))`, evaluated without overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic loss `log(1 + exp(-x))`.
#[inline]
pub fn loss(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// First derivative of [`loss`]: `-sigmoid(-x)`.
#[inline]
pub fn loss_d1(x: f64) -> f64 {
    -sigmoid(-x)
}

/// Second derivative of [`loss`]: `sigmoid(x) * sigmoid(-x)`.
#[inline]
pub fn loss_d2(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxResult {
    pub value: f64,
    pub iterations: usize,
    /// `|v + lambda * loss'(v) - x| / max(1, |x|)` at the returned value.
    pub residual: f64,
}

const PROX_MAX_ITER: usize = 200;

/// Proximal operator of `lambda * loss` at `x`: the unique `v` with
/// `v + lambda * loss'(v) = x`.
///
/// The root lies in `[x, x + lambda]`; Newton steps are taken from a
/// linearised start and replaced by bisection whenever they leave the
/// current bracket.
pub fn prox_logistic(x: f64, lambda: f64) -> Result<ProxResult> {
    if !(lambda > 0.0) || !lambda.is_finite() || !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "prox needs finite x and lambda > 0, got x={x}, lambda={lambda}"
        )));
    }
    let (value, iterations) = prox_solve(x, lambda);
    let residual = (value + lambda * loss_d1(value) - x).abs() / x.abs().max(1.0);
    if iterations > PROX_MAX_ITER {
        return Err(Error::NoConvergence {
            what: "logistic prox",
            iterations: PROX_MAX_ITER,
            residual,
        });
    }
    Ok(ProxResult {
        value,
        iterations,
        residual,
    })
}

/// Value of the proximal operator; used in the quadrature hot loops where
/// the arguments are known to be valid.
#[inline]
pub fn prox_value(x: f64, lambda: f64) -> f64 {
    prox_solve(x, lambda).0
}

#[inline]
fn prox_solve(x: f64, lambda: f64) -> (f64, usize) {
    // Newton with bisection fallback whenever the Newton step would leave
    // the bracket or fails to halve the step length.
    let mut lo = x;
    let mut hi = x + lambda;
    let sx = sigmoid(-x);
    let mut v = x + lambda * sx / (1.0 + lambda * sx * (1.0 - sx));
    if !(v > lo && v < hi) {
        v = 0.5 * (lo + hi);
    }
    let scale = x.abs().max(1.0);
    let tol = 4.0 * f64::EPSILON * scale;
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    for it in 1..=PROX_MAX_ITER {
        let sm = sigmoid(-v);
        let g = v - x - lambda * sm;
        if g.abs() <= 1e-15 * scale {
            return (v, it);
        }
        if g > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let dg = 1.0 + lambda * sm * (1.0 - sm);
        let newton = v - g / dg;
        if !(newton > lo && newton < hi) || (2.0 * g).abs() > (dx_old * dg).abs() {
            dx_old = dx;
            dx = 0.5 * (hi - lo);
            v = lo + dx;
        } else {
            dx_old = dx;
            dx = g / dg;
            v = newton;
        }
        if dx.abs() <= tol || hi - lo <= tol {
            return (v, it);
        }
    }
    (v, PROX_MAX_ITER + 1)
}

/// Moreau envelope `min_v loss(v) + (x - v)^2 / (2 tau)`.
pub fn moreau_env(x: f64, tau: f64) -> Result<f64> {
    let p = prox_logistic(x, tau)?;
    Ok(loss(p.value) + (x - p.value).powi(2) / (2.0 * tau))
}
