//! Small numerical kernels shared across the crate: adaptive Simpson
//! quadrature, bracketed root finding, and piecewise-linear interpolation.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("quadrature failure on [{a}, {b}]: tolerance {tol:e} unreachable (best error {best:e})")]
    Tolerance { a: f64, b: f64, tol: f64, best: f64 },
    #[error("root finding failed: no sign change on [{a}, {b}]")]
    NoBracket { a: f64, b: f64 },
    #[error("non-finite value encountered at x = {x}")]
    NonFinite { x: f64 },
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    (fa + 4.0 * fm + fb) * h / 6.0
}

/// Adaptive Simpson integration of `f` over `[a, b]` with absolute tolerance
/// `tol`. The interval is subdivided until the local Richardson error
/// estimate falls under the locally apportioned tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    for (x, v) in [(a, fa), (m, fm), (b, fb)] {
        if !v.is_finite() {
            return Err(QuadError::NonFinite { x });
        }
    }
    let whole = simpson(fa, fm, fb, b - a);
    let mut worst: f64 = 0.0;
    let value = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 52, &mut worst)?;
    if worst > tol {
        return Err(QuadError::Tolerance { a, b, tol, best: worst });
    }
    Ok(value)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> Result<f64, QuadError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    for (x, v) in [(lm, flm), (rm, frm)] {
        if !v.is_finite() {
            return Err(QuadError::NonFinite { x });
        }
    }
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = (left + right - whole) / 15.0;
    // Rounding noise floor: no amount of subdivision beats a few ulps of the
    // local magnitude, so treat that level as converged.
    let fp_floor = 1e-15 * (left.abs() + right.abs());
    if err.abs() <= tol.max(fp_floor) {
        return Ok(left + right + err);
    }
    // Interval too narrow to split further in f64: accept what we have.
    if depth == 0 || lm <= a || rm <= m {
        *worst = worst.max(err.abs());
        return Ok(left + right + err);
    }
    let half = 0.5 * tol;
    let lv = simpson_rec(f, a, m, fa, flm, fm, left, half, depth - 1, worst)?;
    let rv = simpson_rec(f, m, b, fm, frm, fb, right, half, depth - 1, worst)?;
    Ok(lv + rv)
}

/// Find the root of a continuous `f` on `[lo, hi]` by bisection, assuming
/// `f(lo)` and `f(hi)` have opposite signs. Iterates until the bracket width
/// shrinks below `xtol` relative to the midpoint magnitude (with an absolute
/// floor) or `f` is within `ftol` of zero.
pub fn bisect<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, xtol: f64, ftol: f64) -> Result<f64, QuadError> {
    let (mut lo, mut hi) = (lo, hi);
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(QuadError::NoBracket { a: lo, b: hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if !fmid.is_finite() {
            return Err(QuadError::NonFinite { x: mid });
        }
        if fmid == 0.0 || (fmid.abs() <= ftol && (hi - lo) <= xtol * mid.abs().max(1e-300)) {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        if hi - lo <= xtol * (0.5 * (lo + hi)).abs().max(1e-300) {
            return Ok(0.5 * (lo + hi));
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Piecewise-linear interpolation of `(xs, ys)` at `x`. Outside the table the
/// boundary segment is extended linearly. `xs` must be strictly increasing.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(xs.len() >= 2);
    let n = xs.len();
    let seg = if x <= xs[0] {
        0
    } else if x >= xs[n - 1] {
        n - 2
    } else {
        match xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return ys[i],
            Err(i) => i - 1,
        }
    };
    let t = (x - xs[seg]) / (xs[seg + 1] - xs[seg]);
    ys[seg] + t * (ys[seg + 1] - ys[seg])
}

/// Inverse of a strictly increasing piecewise-linear table: returns `x` with
/// `interp(xs, ys, x) = y`, clamped to the table range.
pub fn interp_inverse(xs: &[f64], ys: &[f64], y: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if y <= ys[0] {
        return xs[0];
    }
    if y >= ys[n - 1] {
        return xs[n - 1];
    }
    let seg = match ys.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
        Ok(i) => return xs[i],
        Err(i) => i - 1,
    };
    let dy = ys[seg + 1] - ys[seg];
    if dy <= 0.0 {
        return xs[seg];
    }
    xs[seg] + (y - ys[seg]) / dy * (xs[seg + 1] - xs[seg])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_exact() {
        // Simpson is exact on cubics.
        let f = |x: f64| 3.0 * x * x * x - x + 2.0;
        let v = adaptive_simpson(&f, -1.0, 2.0, 1e-12).unwrap();
        let exact = 3.0 / 4.0 * (16.0 - 1.0) - 0.5 * (4.0 - 1.0) + 2.0 * 3.0;
        assert!((v - exact).abs() < 1e-10, "got {v}, want {exact}");
    }

    #[test]
    fn simpson_one_over_x() {
        let f = |x: f64| 1.0 / x;
        let v = adaptive_simpson(&f, 1e-6, 1.0, 1e-11).unwrap();
        let exact = (1.0f64 / 1e-6).ln();
        assert!((v - exact).abs() < 1e-8, "got {v}, want {exact}");
    }

    #[test]
    fn bisect_sqrt() {
        let f = |x: f64| x * x - 2.0;
        let r = bisect(&f, 0.0, 2.0, 1e-14, 0.0).unwrap();
        assert!((r - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn interp_roundtrip() {
        let xs = [0.0, 1.0, 3.0, 7.0];
        let ys = [0.0, 2.0, 4.0, 12.0];
        assert_eq!(interp_linear(&xs, &ys, 2.0), 3.0);
        assert_eq!(interp_inverse(&xs, &ys, 3.0), 2.0);
        // extension beyond the right edge follows the last segment
        assert!((interp_linear(&xs, &ys, 9.0) - 16.0).abs() < 1e-12);
    }
}
