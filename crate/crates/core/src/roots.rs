//! Inversion of strictly increasing scalar maps.

use crate::{Error, Result};

/// Absolute tolerance on the residual `|f(x) - y|` accepted by the inverters.
pub const ATOL_INV: f64 = 1e-12;

/// Default half-width multiplier of the search interval: `1e10 * (1 + |y|)`.
pub const SEARCH_SCALE: f64 = 1e10;

const MAX_ITER: usize = 400;

/// Solves `f(x) = y` for `x` in `[lo, hi]`, where `f` is strictly increasing and
/// `f(lo) <= y <= f(hi)`. `eval` returns the value and derivative at a point.
///
/// Newton steps are taken while they stay inside the current bracket; otherwise
/// the bracket is bisected. Stops when the residual is within [`ATOL_INV`] or the
/// bracket has collapsed to adjacent floats, returning the best iterate.
pub fn solve_bracketed<F>(eval: F, y: f64, mut lo: f64, mut hi: f64) -> f64
where
    F: Fn(f64) -> (f64, f64),
{
    let mut x = 0.5 * (lo + hi);
    let mut best = (f64::INFINITY, x);
    for _ in 0..MAX_ITER {
        let (fx, dfx) = eval(x);
        let r = fx - y;
        if r.abs() < best.0 {
            best = (r.abs(), x);
        }
        if r.abs() <= ATOL_INV {
            return x;
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let newton = x - r / dfx;
        x = if dfx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            mid
        };
    }
    best.1
}

/// Inverts a strictly increasing map with `f(0) = 0`, so that the sign of the
/// preimage matches the sign of `y`. The bracket is grown geometrically from
/// `±1` up to `SEARCH_SCALE * (1 + |y|)`.
pub fn invert_anchored<F>(eval: F, y: f64) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    if !y.is_finite() {
        return Err(Error::NoBracket { target: y });
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let limit = SEARCH_SCALE * (1.0 + y.abs());
    let dir = y.signum();
    let mut reach = 1.0_f64;
    loop {
        let v = eval(dir * reach).0;
        if (dir > 0.0 && v >= y) || (dir < 0.0 && v <= y) {
            break;
        }
        if reach >= limit {
            return Err(Error::NoBracket { target: y });
        }
        reach = (reach * 2.0).min(limit);
    }
    let (lo, hi) = if dir > 0.0 { (0.0, reach) } else { (-reach, 0.0) };
    Ok(solve_bracketed(eval, y, lo, hi))
}
