//! Gaussian special functions, quadrature rules and expectations over the
//! pair `(H, V)` that drives every fixed-point equation in this crate.
//!
//! `H` is a standard normal independent of `V`. For the logistic model
//! `V = G * Y` with `G ~ N(0, 1)` and `Y = ±1` drawn with
//! `P(Y = 1 | G) = E sigmoid(s G + sigma Z)`; for the Gaussian mixture
//! `V = G + s`.
//!
//! Plain Gauss–Hermite rules are used where integrands are smooth. The law of
//! `V` under the logistic model and any integrand with a kink are handled by
//! composite Gauss–Legendre rules weighted by the normal density, with panel
//! widths tied to the scale on which the integrand varies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logistic::sigmoid;
use crate::model::ModelKind;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Half-width of the truncated real line used by the composite rules.
/// `phi(9) < 1.1e-18`.
pub const TRUNCATION: f64 = 9.0;

/// Standard normal density.
#[inline]
pub fn normal_pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Upper tail `Q(t) = P(N(0,1) > t)`.
#[inline]
pub fn normal_tail(t: f64) -> f64 {
    0.5 * libm::erfc(t / SQRT_2)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(t: f64) -> f64 {
    normal_tail(-t)
}

/// `E (X)_-^2` for `X ~ N(m, 1)`, i.e. `(1 + m^2) Q(m) - m phi(m)`.
///
/// For `m >= 10` the two terms cancel to many digits; an asymptotic series
/// `phi(m) * sum_j (-1)^(j+1) 2j (2j-1)!! m^(-2j-1)` is used instead.
pub fn truncated_second_moment(m: f64) -> f64 {
    if m < 10.0 {
        return ((1.0 + m * m) * normal_tail(m) - m * normal_pdf(m)).max(0.0);
    }
    let inv2 = 1.0 / (m * m);
    let mut term = 1.0 / m; // (2j-1)!! m^(-2j-1) at j = 0
    let mut sum = 0.0;
    for j in 1..30 {
        term *= (2 * j - 1) as f64 * inv2;
        let add = if j % 2 == 1 { 1.0 } else { -1.0 } * 2.0 * j as f64 * term;
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    normal_pdf(m) * sum
}

/// A quadrature rule given by nodes and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Gauss–Hermite rule for `E f(G)`, `G ~ N(0, 1)`; weights sum to one.
    pub fn hermite(n: usize) -> Result<Self> {
        if !(2..=1024).contains(&n) {
            return Err(Error::InvalidParameter(format!(
                "Gauss-Hermite order must be in [2, 1024], got {n}"
            )));
        }
        // Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix of the
        // probabilists' Hermite polynomials, weights the squared first
        // components of the normalised eigenvectors.
        let mut diag = vec![0.0; n];
        let mut off: Vec<f64> = (1..=n)
            .map(|k| if k < n { (k as f64).sqrt() } else { 0.0 })
            .collect();
        let mut first = vec![0.0; n];
        first[0] = 1.0;
        symmetric_tridiagonal_eigen(&mut diag, &mut off, &mut first)?;
        let mut pairs: Vec<(f64, f64)> =
            diag.iter().zip(&first).map(|(&x, &q)| (x, q * q)).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Enforce the symmetry of the rule exactly.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-x, w);
            pairs[j] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    /// Gauss–Legendre rule on `[-1, 1]`.
    pub fn legendre(n: usize) -> Result<Self> {
        if !(1..=1024).contains(&n) {
            return Err(Error::InvalidParameter(format!(
                "Gauss-Legendre order must be in [1, 1024], got {n}"
            )));
        }
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut pp = 1.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
                }
                pp = nf * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= 1e-16 {
                    break;
                }
            }
            x[i] = -z;
            x[n - 1 - i] = z;
            w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[m - 1] = 0.0;
        }
        Ok(Self {
            nodes: x,
            weights: w,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_i w_i f(x_i)`.
    pub fn apply<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Composite rule for `int_a^b phi(t) f(t) dt`, built from this rule
    /// (taken as a rule on `[-1, 1]`) on equal panels no wider than
    /// `max_width`.
    pub fn normal_panels(&self, a: f64, b: f64, max_width: f64) -> GaussRule {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        self.for_each_normal_node(a, b, max_width, |t, w| {
            nodes.push(t);
            weights.push(w);
        });
        GaussRule { nodes, weights }
    }

    /// Visit the nodes of [`GaussRule::normal_panels`] without allocating.
    #[inline]
    pub fn for_each_normal_node<F: FnMut(f64, f64)>(
        &self,
        a: f64,
        b: f64,
        max_width: f64,
        mut visit: F,
    ) {
        if !(b > a) {
            return;
        }
        let panels = ((b - a) / max_width).ceil().max(1.0) as usize;
        let width = (b - a) / panels as f64;
        let half = 0.5 * width;
        for k in 0..panels {
            let centre = a + width * (k as f64 + 0.5);
            for (&x, &w) in self.nodes.iter().zip(&self.weights) {
                let t = centre + half * x;
                visit(t, half * w * normal_pdf(t));
            }
        }
    }

    /// `int_a^b phi(t) f(t) dt` by the composite rule.
    #[inline]
    pub fn integrate_normal<F: FnMut(f64) -> f64>(
        &self,
        a: f64,
        b: f64,
        max_width: f64,
        mut f: F,
    ) -> f64 {
        let mut acc = 0.0;
        self.for_each_normal_node(a, b, max_width, |t, w| acc += w * f(t));
        acc
    }
}

/// Implicit QL iteration for a symmetric tridiagonal matrix with diagonal
/// `d` and sub-diagonal `e` (`e[i]` couples `i` and `i + 1`; the last entry is
/// ignored). On return `d` holds the eigenvalues and `q` the first row of the
/// eigenvector matrix, transformed from its initial contents.
fn symmetric_tridiagonal_eigen(d: &mut [f64], e: &mut [f64], q: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence {
                    what: "tridiagonal eigenvalues",
                    iterations: iter,
                    residual: e[l].abs(),
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let f = q[i + 1];
                q[i + 1] = s * q[i] + c * f;
                q[i] = c * q[i] - s * f;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Quadrature resolution shared by all expectation routines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Order of the Gauss–Hermite rules. Composite Gauss–Legendre panels use
    /// `max(8, nodes_per_dim / 8)` points each.
    pub nodes_per_dim: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { nodes_per_dim: 64 }
    }
}

impl QuadratureSpec {
    pub fn new(nodes_per_dim: usize) -> Result<Self> {
        let q = Self { nodes_per_dim };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=1024).contains(&self.nodes_per_dim) {
            return Err(Error::InvalidParameter(format!(
                "nodes_per_dim must be in [8, 1024], got {}",
                self.nodes_per_dim
            )));
        }
        Ok(())
    }

    pub fn hermite(&self) -> Result<GaussRule> {
        GaussRule::hermite(self.nodes_per_dim)
    }

    pub fn panel_points(&self) -> usize {
        (self.nodes_per_dim / 8).max(8)
    }

    pub fn panel_rule(&self) -> Result<GaussRule> {
        GaussRule::legendre(self.panel_points())
    }
}

/// Beyond this argument the sigmoid equals 0 or 1 to within `4.3e-18`.
const SIGMOID_SATURATION: f64 = 40.0;

/// `E sigmoid(m + tau W)`, `W ~ N(0, 1)`, using a composite rule `panel` on
/// `[-1, 1]`. Only the window where the sigmoid is not saturated is
/// integrated numerically; the saturated upper part contributes a normal
/// tail probability.
pub fn logistic_normal_mean(m: f64, tau: f64, panel: &GaussRule) -> f64 {
    if tau == 0.0 {
        return sigmoid(m);
    }
    let tau = tau.abs();
    let hi = ((SIGMOID_SATURATION - m) / tau).clamp(-TRUNCATION, TRUNCATION);
    let lo = ((-SIGMOID_SATURATION - m) / tau).clamp(-TRUNCATION, TRUNCATION);
    let width = (2.0 / tau).min(1.0);
    normal_tail(hi) + panel.integrate_normal(lo, hi, width, |w| sigmoid(m + tau * w))
}

/// `(E sigmoid(X), E sigmoid'(X), E sigmoid''(X))` for `X ~ N(m, tau^2)`.
pub fn logistic_normal_moments(m: f64, tau: f64, panel: &GaussRule) -> (f64, f64, f64) {
    let derivs = |x: f64| {
        let p = sigmoid(x);
        let d1 = p * (1.0 - p);
        (p, d1, d1 * (1.0 - 2.0 * p))
    };
    if tau == 0.0 {
        return derivs(m);
    }
    let tau = tau.abs();
    let hi = ((SIGMOID_SATURATION - m) / tau).clamp(-TRUNCATION, TRUNCATION);
    let lo = ((-SIGMOID_SATURATION - m) / tau).clamp(-TRUNCATION, TRUNCATION);
    let width = (2.0 / tau).min(1.0);
    let mut acc = (normal_tail(hi), 0.0, 0.0);
    panel.for_each_normal_node(lo, hi, width, |w, weight| {
        let (a, b, c) = derivs(m + tau * w);
        acc.0 += weight * a;
        acc.1 += weight * b;
        acc.2 += weight * c;
    });
    acc
}

/// `P(Y = 1 | G = g) = E sigmoid(s g + sigma Z)` for the logistic model,
/// tabulated on Gauss–Legendre panels and interpolated within each panel.
#[derive(Debug, Clone)]
pub struct LabelProbability {
    s: f64,
    sigma: f64,
    panel: GaussRule,
    bary: Vec<f64>,
    start: f64,
    width: f64,
    /// Values at the panel nodes, panel after panel.
    values: Vec<f64>,
}

impl LabelProbability {
    pub fn new(s: f64, sigma: f64, quad: &QuadratureSpec) -> Result<Self> {
        let panel = quad.panel_rule()?;
        let width = 0.5 * Self::transition_width(s, sigma).min(2.0);
        let per_side = (TRUNCATION / width).ceil();
        let width = TRUNCATION / per_side;
        let panels = 2 * per_side as usize;
        let start = -TRUNCATION;
        let mut values = Vec::with_capacity(panels * panel.len());
        for k in 0..panels {
            let centre = start + width * (k as f64 + 0.5);
            for &x in &panel.nodes {
                values.push(logistic_normal_mean(
                    s * (centre + 0.5 * width * x),
                    sigma,
                    &panel,
                ));
            }
        }
        let bary = (0..panel.len())
            .map(|j| {
                let prod: f64 = (0..panel.len())
                    .filter(|&k| k != j)
                    .map(|k| panel.nodes[j] - panel.nodes[k])
                    .product();
                1.0 / prod
            })
            .collect();
        Ok(Self {
            s,
            sigma,
            panel,
            bary,
            start,
            width,
            values,
        })
    }

    /// Scale in `g` over which the label probability changes:
    /// `sqrt(sigma^2 + pi^2 / 3) / s`.
    pub fn transition_width(s: f64, sigma: f64) -> f64 {
        if s == 0.0 {
            f64::INFINITY
        } else {
            (sigma * sigma + LOGISTIC_VAR).sqrt() / s
        }
    }

    /// Width of the interpolation panels.
    pub fn panel_width(&self) -> f64 {
        self.width
    }

    pub fn eval(&self, g: f64) -> f64 {
        let u = (g - self.start) / self.width;
        let panels = self.values.len() / self.panel.len();
        if !(u >= 0.0 && u < panels as f64) {
            return logistic_normal_mean(self.s * g, self.sigma, &self.panel);
        }
        let k = u as usize;
        let x = 2.0 * (u - k as f64) - 1.0;
        let vals = &self.values[k * self.panel.len()..(k + 1) * self.panel.len()];
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&xj, &bj), &fj) in self.panel.nodes.iter().zip(&self.bary).zip(vals) {
            let d = x - xj;
            if d == 0.0 {
                return fj;
            }
            let c = bj / d;
            num += c * fj;
            den += c;
        }
        num / den
    }

    /// Density of `V = G Y`: `2 phi(v) P(Y = 1 | G = v)`.
    #[inline]
    pub fn v_density(&self, v: f64) -> f64 {
        2.0 * normal_pdf(v) * self.eval(v)
    }

    /// Atoms for the law of `V` on panels of width `panel_width() * factor`.
    pub fn law(&self, factor: f64) -> VLaw {
        let rule = self
            .panel
            .normal_panels(-TRUNCATION, TRUNCATION, self.width * factor);
        let weights = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&v, &w)| 2.0 * w * self.eval(v))
            .collect();
        VLaw {
            values: rule.nodes,
            weights,
        }
    }

    fn panel_count(&self) -> usize {
        self.values.len() / self.panel.len()
    }

    /// `E f(V)` over the panels `first..last` of the table grid.
    fn expect_v_panels<F: FnMut(f64) -> f64>(&self, f: &mut F, first: usize, last: usize) -> f64 {
        let n = self.panel.len();
        let half = 0.5 * self.width;
        let mut acc = 0.0;
        for k in first..last {
            let centre = self.start + self.width * (k as f64 + 0.5);
            for j in 0..n {
                let v = centre + half * self.panel.nodes[j];
                acc += 2.0
                    * half
                    * self.panel.weights[j]
                    * normal_pdf(v)
                    * self.values[k * n + j]
                    * f(v);
            }
        }
        acc
    }

    /// `E f(V)` for `f` smooth except near `kink`, where it varies on the
    /// scale `kink_width` (zero for a genuine kink). Table panels away from
    /// the kink are used as they are; the panels covering
    /// `kink ± 12 kink_width` are replaced by finer panels split at the kink.
    pub fn expect_v_near<F: FnMut(f64) -> f64>(&self, mut f: F, kink: f64, kink_width: f64) -> f64 {
        let panels = self.panel_count();
        if !kink.is_finite() || kink <= -TRUNCATION || kink >= TRUNCATION {
            return self.expect_v_panels(&mut f, 0, panels);
        }
        let reach = 12.0 * kink_width;
        let first =
            (((kink - reach - self.start) / self.width).floor().max(0.0) as usize).min(panels);
        let last = (((kink + reach - self.start) / self.width).floor() as usize + 1).min(panels);
        let edge_lo = self.start + self.width * first as f64;
        let edge_hi = self.start + self.width * last as f64;
        let inner = if kink_width == 0.0 {
            self.width
        } else {
            kink_width.clamp(self.width / 64.0, self.width)
        };
        let mut acc =
            self.expect_v_panels(&mut f, 0, first) + self.expect_v_panels(&mut f, last, panels);
        for (a, b) in [(edge_lo, kink), (kink, edge_hi)] {
            self.panel
                .for_each_normal_node(a, b, inner, |v, w| acc += 2.0 * w * self.eval(v) * f(v));
        }
        acc
    }
}

/// Scalar law of `V` for one of the two data models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelV {
    pub model: ModelKind,
    /// Signal strength `s = ||beta0||` seen by the learner.
    pub s: f64,
    /// Total signal strength.
    pub r: f64,
    /// Strength of the unobserved part, `sqrt(r^2 - s^2)`.
    pub sigma: f64,
}

impl NoiseModelV {
    pub fn new(model: ModelKind, s: f64, r: f64) -> Result<Self> {
        if !(s.is_finite() && r.is_finite()) || s < 0.0 || r <= 0.0 || s > r * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= s <= r and r > 0, got s={s}, r={r}"
            )));
        }
        let s = s.min(r);
        Ok(Self {
            model,
            s,
            r,
            sigma: (r * r - s * s).max(0.0).sqrt(),
        })
    }

    /// Same as [`NoiseModelV::new`] but with `sigma` given directly.
    pub fn from_parts(model: ModelKind, s: f64, sigma: f64) -> Result<Self> {
        if !(s.is_finite() && sigma.is_finite()) || s < 0.0 || sigma < 0.0 || s + sigma == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "need s, sigma >= 0 not both zero, got s={s}, sigma={sigma}"
            )));
        }
        Ok(Self {
            model,
            s,
            r: s.hypot(sigma),
            sigma,
        })
    }

    /// Misclassification probability of a linear rule whose normalised
    /// component along the true direction is `c` (in `[-1, 1]`), i.e.
    /// `P(c V + sqrt(1 - c^2) H < 0)`.
    pub fn direction_risk(&self, c: f64, quad: &QuadratureSpec) -> Result<f64> {
        if !(c.abs() <= 1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "direction cosine {c} outside [-1, 1]"
            )));
        }
        let c = c.clamp(-1.0, 1.0);
        match self.model {
            ModelKind::GaussianMixture => Ok(normal_tail(c * self.s)),
            ModelKind::Logistic => {
                // 2 int_{-inf}^0 phi(u) E sigmoid(s c u + tau W) du
                let panel = quad.panel_rule()?;
                let slope = self.s * c;
                let tau = (self.s * self.s * (1.0 - c * c) + self.sigma * self.sigma).sqrt();
                let width = if slope == 0.0 {
                    1.0
                } else {
                    ((tau * tau + LOGISTIC_VAR).sqrt() / slope.abs()).min(1.0)
                };
                Ok(2.0
                    * panel.integrate_normal(-TRUNCATION, 0.0, width, |u| {
                        logistic_normal_mean(slope * u, tau, &panel)
                    }))
            }
        }
    }
}

/// Variance of the standard logistic distribution, `pi^2 / 3`.
const LOGISTIC_VAR: f64 = std::f64::consts::PI * std::f64::consts::PI / 3.0;

/// Discrete approximation of the law of `V` by weighted atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct VLaw {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl VLaw {
    /// Logistic model: `V` has density `2 phi(v) E sigmoid(s v + sigma Z)`,
    /// integrated with panels no wider than the scale of the label
    /// transition. Gaussian mixture: Gauss–Hermite nodes shifted by `s`.
    pub fn new(noise: &NoiseModelV, quad: &QuadratureSpec) -> Result<Self> {
        Self::with_refinement(noise, quad, 1.0)
    }

    /// As [`VLaw::new`], with logistic panel widths multiplied by `factor`
    /// (in `(0, 1]`) for integrands that vary faster in `v`.
    pub fn with_refinement(
        noise: &NoiseModelV,
        quad: &QuadratureSpec,
        factor: f64,
    ) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "refinement factor {factor} not in (0, 1]"
            )));
        }
        match noise.model {
            ModelKind::GaussianMixture => {
                let gh = quad.hermite()?;
                Ok(Self {
                    values: gh.nodes.iter().map(|g| g + noise.s).collect(),
                    weights: gh.weights,
                })
            }
            ModelKind::Logistic => {
                Ok(LabelProbability::new(noise.s, noise.sigma, quad)?.law(factor))
            }
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| w * f(v))
            .sum()
    }
}

/// Tensor quadrature over `(H, V)`.
#[derive(Debug, Clone)]
pub struct HvQuadrature {
    pub h: GaussRule,
    pub panel: GaussRule,
    pub v: VLaw,
}

impl HvQuadrature {
    pub fn new(noise: &NoiseModelV, quad: &QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        Ok(Self {
            h: quad.hermite()?,
            panel: quad.panel_rule()?,
            v: VLaw::new(noise, quad)?,
        })
    }

    /// `E f(H, V)` for integrands smooth in `H`.
    pub fn expect<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (&v, &wv) in self.v.values.iter().zip(&self.v.weights) {
            let mut inner = 0.0;
            for (&h, &wh) in self.h.nodes.iter().zip(&self.h.weights) {
                let y = f(h, v);
                if !y.is_finite() {
                    return Err(Error::NonFiniteIntegrand { h, v });
                }
                inner += wh * y;
            }
            acc += wv * inner;
        }
        Ok(acc)
    }

    /// `E f(H, V)` for integrands that are smooth in `H` except at
    /// `H = kink(V)`. The `H` integral is split at the kink.
    pub fn expect_with_kink<F, K>(&self, mut f: F, mut kink: K) -> Result<f64>
    where
        F: FnMut(f64, f64) -> f64,
        K: FnMut(f64) -> f64,
    {
        let mut acc = 0.0;
        for (&v, &wv) in self.v.values.iter().zip(&self.v.weights) {
            let inner = split_normal_integral(&self.panel, kink(v), |h| f(h, v))
                .map_err(|h| Error::NonFiniteIntegrand { h, v })?;
            acc += wv * inner;
        }
        Ok(acc)
    }
}

/// `E f(H)` for `f` smooth except at `b`: composite rules on `[-T, b]` and
/// `[b, T]`. On a non-finite evaluation the offending node is returned.
pub fn split_normal_integral<F: FnMut(f64) -> f64>(
    panel: &GaussRule,
    b: f64,
    mut f: F,
) -> std::result::Result<f64, f64> {
    let mut acc = 0.0;
    let mut bad = None;
    let mut visit = |t: f64, w: f64| {
        let y = f(t);
        if !y.is_finite() && bad.is_none() {
            bad = Some(t);
        }
        acc += w * y;
    };
    if b.is_finite() && b > -TRUNCATION && b < TRUNCATION {
        panel.for_each_normal_node(-TRUNCATION, b, 1.0, &mut visit);
        panel.for_each_normal_node(b, TRUNCATION, 1.0, &mut visit);
    } else {
        panel.for_each_normal_node(-TRUNCATION, TRUNCATION, 1.0, &mut visit);
    }
    match bad {
        Some(t) => Err(t),
        None => Ok(acc),
    }
}

/// `E f(H, V)` with the default tensor rule; see [`HvQuadrature::expect`].
pub fn expect_hv<F: FnMut(f64, f64) -> f64>(
    f: F,
    noise: &NoiseModelV,
    quad: &QuadratureSpec,
) -> Result<f64> {
    HvQuadrature::new(noise, quad)?.expect(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trapezoid(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + h * i as f64);
        }
        s * h
    }

    #[test]
    fn tail_reference_values() {
        assert!((normal_tail(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_tail(1.0) - 0.158_655_253_931_457_05).abs() < 1e-16);
        assert!((normal_tail(5.0) / 2.866_515_718_791_939e-7 - 1.0).abs() < 1e-13);
        assert!((normal_cdf(-2.0) - 0.022_750_131_948_179_2).abs() < 1e-16);
    }

    #[test]
    fn hermite_moments() {
        for &n in &[8usize, 64, 128, 257] {
            let gh = GaussRule::hermite(n).unwrap();
            assert!((gh.apply(|_| 1.0) - 1.0).abs() < 1e-14, "n={n}");
            assert!(gh.apply(|x| x).abs() < 1e-13);
            assert!((gh.apply(|x| x * x) - 1.0).abs() < 1e-12, "n={n}");
            assert!((gh.apply(|x| x.powi(4)) - 3.0).abs() < 1e-11, "n={n}");
            assert!((gh.apply(|x| x.powi(6)) - 15.0).abs() < 1e-10, "n={n}");
            if n >= 64 {
                assert!(
                    (gh.apply(|x| x.cos()) - (-0.5f64).exp()).abs() < 1e-13,
                    "n={n}"
                );
            }
        }
    }

    #[test]
    fn legendre_exact_for_polynomials() {
        for n in 1..=12usize {
            let gl = GaussRule::legendre(n).unwrap();
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                let got = gl.apply(|x| x.powi(deg as i32));
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn truncated_second_moment_against_quadrature() {
        for &m in &[-4.0, -1.0, 0.0, 0.5, 1.0, 3.0, 7.0] {
            let direct = trapezoid(-12.0, -m, 400_000, |t| normal_pdf(t) * (t + m).powi(2));
            let got = truncated_second_moment(m);
            assert!((got - direct).abs() < 1e-11, "m={m}: {got} vs {direct}");
        }
        assert!((truncated_second_moment(0.0) - 0.5).abs() < 1e-16);
        assert!((truncated_second_moment(1.0) - 0.075_339_783_343_770_78).abs() < 1e-15);
    }

    #[test]
    fn truncated_second_moment_is_continuous_at_switch() {
        let below = truncated_second_moment(10.0 - 1e-9);
        let above = truncated_second_moment(10.0);
        assert!((below / above - 1.0).abs() < 1e-7);
    }

    #[test]
    fn split_integral_of_kinked_function() {
        let panel = GaussRule::legendre(8).unwrap();
        let got = split_normal_integral(&panel, -1.0, |h| (h + 1.0).min(0.0).powi(2)).unwrap();
        assert!((got - truncated_second_moment(1.0)).abs() < 1e-14);
    }

    #[test]
    fn logistic_normal_mean_against_trapezoid() {
        let panel = GaussRule::legendre(8).unwrap();
        for &(m, tau) in &[(0.0, 1.0), (1.3, 0.2), (-2.0, 5.0), (4.0, 25.0), (0.7, 0.0)] {
            let reference = if tau == 0.0 {
                sigmoid(m)
            } else {
                trapezoid(-12.0, 12.0, 200_000, |w| {
                    normal_pdf(w) * sigmoid(m + tau * w)
                })
            };
            let got = logistic_normal_mean(m, tau, &panel);
            assert!((got - reference).abs() < 1e-12, "m={m} tau={tau}");
        }
    }

    #[test]
    fn logistic_v_law_moments() {
        // E V = E[G (2 p(G) - 1)] computed by brute force over (G, Z).
        let noise = NoiseModelV::new(ModelKind::Logistic, 3.0, 5.0).unwrap();
        let law = VLaw::new(&noise, &QuadratureSpec::default()).unwrap();
        assert!((law.expect(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!((law.expect(|v| v * v) - 1.0).abs() < 1e-12);
        let panel = GaussRule::legendre(8).unwrap();
        let mean = trapezoid(-10.0, 10.0, 20_000, |g| {
            normal_pdf(g) * g * (2.0 * logistic_normal_mean(3.0 * g, 4.0, &panel) - 1.0)
        });
        assert!((law.expect(|v| v) - mean).abs() < 1e-10);
    }

    #[test]
    fn gm_v_law_is_shifted_normal() {
        let noise = NoiseModelV::new(ModelKind::GaussianMixture, 1.5, 2.0).unwrap();
        let law = VLaw::new(&noise, &QuadratureSpec::default()).unwrap();
        assert!((law.expect(|v| v) - 1.5).abs() < 1e-13);
        assert!((law.expect(|v| v * v) - 3.25).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_logistic_law_is_standard_normal() {
        let noise = NoiseModelV::new(ModelKind::Logistic, 0.0, 3.0).unwrap();
        let law = VLaw::new(&noise, &QuadratureSpec::default()).unwrap();
        assert!(law.expect(|v| v).abs() < 1e-14);
        assert!((law.expect(|v| v * v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kinked_expectation_matches_semi_analytic_form() {
        // E (H + t V)_-^2 = E_V tsm(t V)
        for model in [ModelKind::Logistic, ModelKind::GaussianMixture] {
            let noise = NoiseModelV::new(model, 2.0, 4.0).unwrap();
            let q = HvQuadrature::new(&noise, &QuadratureSpec::default()).unwrap();
            let t = 0.8;
            let generic = q
                .expect_with_kink(|h, v| (h + t * v).min(0.0).powi(2), |v| -t * v)
                .unwrap();
            let semi = q.v.expect(|v| truncated_second_moment(t * v));
            assert!((generic - semi).abs() < 1e-12, "{model:?}");
        }
    }

    #[test]
    fn plain_hermite_struggles_with_kinks() {
        let gh = GaussRule::hermite(64).unwrap();
        let err = (gh.apply(|h| (h + 1.0).min(0.0).powi(2)) - truncated_second_moment(1.0)).abs();
        assert!(err > 1e-8);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let noise = NoiseModelV::new(ModelKind::GaussianMixture, 1.0, 2.0).unwrap();
        let res = expect_hv(
            |h, _| if h > 3.0 { f64::NAN } else { h },
            &noise,
            &QuadratureSpec::default(),
        );
        assert!(matches!(res, Err(Error::NonFiniteIntegrand { .. })));
    }

    #[test]
    fn direction_risk_extremes() {
        let q = QuadratureSpec::default();
        let noise = NoiseModelV::new(ModelKind::Logistic, 3.0, 5.0).unwrap();
        assert!((noise.direction_risk(0.0, &q).unwrap() - 0.5).abs() < 1e-14);
        let best = noise.direction_risk(1.0, &q).unwrap();
        let worst = noise.direction_risk(-1.0, &q).unwrap();
        assert!((best + worst - 1.0).abs() < 1e-13);
        // Adaptive double quadrature of 2 phi(u) phi(w) sigmoid(3u + 4w)
        // over u < 0.
        let reference = 0.308_787_940_598_929_1;
        assert!((best - reference).abs() < 1e-13, "{best} vs {reference}");
    }

    proptest! {
        #[test]
        fn doubling_nodes_changes_smooth_expectations_little(
            s in 0.1f64..4.0, extra in 0.0f64..4.0, gm in proptest::bool::ANY,
            a in -1.0f64..1.0, b in -1.0f64..1.0,
        ) {
            let model = if gm { ModelKind::GaussianMixture } else { ModelKind::Logistic };
            let noise = NoiseModelV::new(model, s, s + extra).unwrap();
            let f = |h: f64, v: f64| (a * h + b * v).sin() + (0.3 * h * v).cos();
            let base = expect_hv(f, &noise, &QuadratureSpec::new(64).unwrap()).unwrap();
            let fine = expect_hv(f, &noise, &QuadratureSpec::new(128).unwrap()).unwrap();
            prop_assert!((base - fine).abs() < 1e-8);
        }

        #[test]
        fn tsm_is_decreasing(m in -20.0f64..30.0, dm in 1e-3f64..2.0) {
            prop_assert!(truncated_second_moment(m + dm) <= truncated_second_moment(m));
        }
    }
}
