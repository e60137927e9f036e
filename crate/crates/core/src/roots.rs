//! Bracketed scalar root finding: bisection to shrink the bracket, then an
//! Illinois-safeguarded secant to polish.

use crate::error::{Error, Result};

const BISECTION_STEPS: usize = 12;
const MAX_ITERATIONS: usize = 200;

/// Find x in [lo, hi] with |f(x)| ≤ `tol`, given that f(lo) and f(hi) do not
/// share a strict sign. An endpoint where f vanishes exactly is returned as
/// is, `lo` first.
///
/// If the bracket collapses to rounding width before `tol` is met the best
/// point found is returned: for a continuous f this means `tol` is below the
/// attainable precision.
pub fn bracketed_root(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut fa = f(a);
    let mut fb = f(b);
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::RootNotFound(format!("non-finite value at bracket ends [{a}, {b}]")));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::RootNotFound(format!(
            "no sign change on [{a}, {b}] (f = {fa:e}, {fb:e})"
        )));
    }
    let mut best = if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) };
    // Which end was retained last, for the Illinois halving.
    let mut side = 0i8;
    for iter in 0..MAX_ITERATIONS {
        if best.1.abs() <= tol {
            return Ok(best.0);
        }
        let width = b - a;
        if width <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
            return Ok(best.0);
        }
        let mut x = if iter < BISECTION_STEPS {
            0.5 * (a + b)
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let fx = f(x);
        if !fx.is_finite() {
            return Err(Error::RootNotFound(format!("non-finite value at {x}")));
        }
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    if best.1.abs() <= tol {
        Ok(best.0)
    } else {
        Err(Error::RootNotFound(format!(
            "no convergence after {MAX_ITERATIONS} iterations (best |f| = {:e})",
            best.1.abs()
        )))
    }
}
