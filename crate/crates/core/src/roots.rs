//! Scalar root finding and minimisation.

use crate::error::{Error, Result};

/// Brent's method for a root of `f` on `[a, b]`. The endpoint values must have
/// opposite signs (or one of them must be zero).
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::BracketFailure(format!(
            "f({a})={fa}, f({b})={fb} do not bracket a root"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::BracketFailure(format!("f({b}) is not finite")));
        }
    }
    Err(Error::NoConvergence {
        what: "brent root",
        iterations: max_iter,
        residual: fb.abs(),
    })
}

/// Golden-section search for a minimiser of `f` on `[a, b]`. Returns
/// `(argmin, min)`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > xtol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Minimise a function on `[a, b]` by a uniform scan of `points` points
/// followed by golden-section refinement around the best grid point.
pub fn scan_then_golden<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    points: usize,
    xtol: f64,
) -> (f64, f64) {
    let points = points.max(3);
    let h = (b - a) / (points - 1) as f64;
    let mut best = (a, f(a));
    let mut best_k = 0;
    for k in 1..points {
        let x = if k == points - 1 { b } else { a + h * k as f64 };
        let y = f(x);
        if y < best.1 {
            best = (x, y);
            best_k = k;
        }
    }
    let lo = if best_k == 0 {
        a
    } else {
        a + h * (best_k - 1) as f64
    };
    let hi = if best_k + 1 >= points {
        b
    } else {
        a + h * (best_k + 1) as f64
    };
    let refined = golden_min(&mut f, lo, hi, xtol);
    if refined.1 < best.1 {
        refined
    } else {
        best
    }
}

/// Grow `hi` geometrically from `start` until `f(hi)` has the sign `target`.
/// Returns the last point with the opposite sign and the first point with the
/// target sign.
pub fn expand_up<F: FnMut(f64) -> f64>(
    mut f: F,
    start: f64,
    target_positive: bool,
    factor: f64,
    limit: f64,
) -> Result<(f64, f64)> {
    let mut lo = start;
    let mut hi = start;
    loop {
        let y = f(hi);
        if !y.is_finite() {
            return Err(Error::BracketFailure(format!("f({hi}) is not finite")));
        }
        if y == 0.0 || (y > 0.0) == target_positive {
            return Ok((lo, hi));
        }
        if hi > limit {
            return Err(Error::BracketFailure(format!(
                "no sign change found up to {limit}"
            )));
        }
        lo = hi;
        hi *= factor;
    }
}

/// Root of an increasing function on `(floor, inf)` by Newton steps
/// safeguarded with a bracket. `f` returns the value and the derivative.
/// The search starts at `x0` and expands geometrically until the sign changes.
pub fn solve_increasing<F>(mut f: F, x0: f64, floor: f64, rel_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let mut lo = floor;
    let mut hi = f64::INFINITY;
    let mut x = if x0 > floor { x0 } else { floor + 1.0 };
    let mut last = f64::NAN;
    for _ in 0..300 {
        let (fx, dfx) = f(x)?;
        if !fx.is_finite() {
            return Err(Error::BracketFailure(format!("f({x}) is not finite")));
        }
        last = fx;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = if dfx > 0.0 && dfx.is_finite() {
            x - fx / dfx
        } else {
            f64::NAN
        };
        let next = if hi.is_finite() {
            if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            }
        } else if newton > x && newton < x + 16.0 * (x - floor) {
            newton
        } else {
            floor + 2.0 * (x - floor)
        };
        if (next - x).abs() <= rel_tol * x.abs().max(1e-12) {
            return Ok(next);
        }
        if hi.is_finite() && hi - lo <= rel_tol * hi.abs().max(1e-12) {
            return Ok(0.5 * (lo + hi));
        }
        if next > 1e15 {
            return Err(Error::BracketFailure("root escaped above 1e15".into()));
        }
        x = next;
    }
    Err(Error::NoConvergence {
        what: "safeguarded Newton",
        iterations: 300,
        residual: last.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cube_root() {
        let x = brent(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15, 100).unwrap();
        assert!((x - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn brent_rejects_non_bracket() {
        assert!(brent(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 100).is_err());
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, y) = golden_min(|x| (x - 0.3).powi(2) + 1.0, -2.0, 5.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scan_handles_boundary_minimum() {
        let (x, _) = scan_then_golden(|x| x, -1.0, 1.0, 200, 1e-12);
        assert_eq!(x, -1.0);
        let (x, _) = scan_then_golden(|x| (x - 0.999).abs(), -1.0, 1.0, 200, 1e-13);
        assert!((x - 0.999).abs() < 1e-10);
    }

    #[test]
    fn solve_increasing_newton() {
        let x = solve_increasing(|x| Ok((x.ln() - 2.0, 1.0 / x)), 1.0, 0.0, 1e-15).unwrap();
        assert!((x - 2f64.exp()).abs() < 1e-12);
        let x = solve_increasing(|x| Ok((x - 0.25, 0.0)), 5.0, 0.0, 1e-14).unwrap();
        assert!((x - 0.25).abs() < 1e-13);
        let x = solve_increasing(|x| Ok((x.powi(3) - 1e6, 3.0 * x * x)), 1e-3, 0.0, 1e-15).unwrap();
        assert!((x - 100.0).abs() < 1e-10);
    }

    #[test]
    fn expand_up_brackets() {
        let (lo, hi) = expand_up(|x| x - 37.0, 1.0, true, 2.0, 1e6).unwrap();
        assert_eq!((lo, hi), (32.0, 64.0));
    }
}
