//! Scale densities `F_ε(x) = exp{-2∫₀ˣ b_ε/σ_ε²}` and scale functions
//! `f_ε(x) = ∫₀ˣ F_ε`, with their inverse.
//!
//! Values are anchored on a knot table that grows outward from 0 on demand.
//! Knot positions depend only on ε and the declared breakpoints, and each knot
//! is computed from its inner neighbour, so results do not depend on the order
//! in which points are queried.

use std::cell::RefCell;
use std::sync::{Arc, RwLock};

use super::{CoefficientFamily, ScalarCoefficient};
use crate::quadrature;
use crate::roots::{self, SEARCH_SCALE};
use crate::{Error, Result};

const KNOT_SPACING: f64 = 0.25;

#[derive(Debug, Default, Clone)]
struct Knots {
    /// Distances from 0 along this half-line, increasing; `dist[0] = 0`.
    dist: Vec<f64>,
    /// `∫₀ˣ b/σ²` at each knot.
    exponent: Vec<f64>,
    /// `f(x)` at each knot.
    value: Vec<f64>,
}

/// Scale density and scale function of one member (fixed ε) of a family.
pub struct ScaleMap {
    eps: f64,
    b: ScalarCoefficient,
    sigma: ScalarCoefficient,
    /// Breakpoints on each half-line, as increasing distances from 0.
    breaks: [Vec<f64>; 2],
    knots: [RwLock<Knots>; 2],
}

impl std::fmt::Debug for ScaleMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScaleMap")
            .field("eps", &self.eps)
            .finish_non_exhaustive()
    }
}

fn side_of(x: f64) -> (usize, f64) {
    if x < 0.0 {
        (1, -1.0)
    } else {
        (0, 1.0)
    }
}

impl ScaleMap {
    pub fn new(fam: &CoefficientFamily, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
        }
        let bps = fam.breakpoints(eps);
        let right: Vec<f64> = bps.iter().copied().filter(|&p| p > 0.0).collect();
        let mut left: Vec<f64> = bps.iter().copied().filter(|&p| p < 0.0).map(|p| -p).collect();
        left.reverse();
        let start = Knots {
            dist: vec![0.0],
            exponent: vec![0.0],
            value: vec![0.0],
        };
        Ok(ScaleMap {
            eps,
            b: fam.b_eps.at(eps),
            sigma: fam.sigma_eps.at(eps),
            breaks: [right, left],
            knots: [RwLock::new(start.clone()), RwLock::new(start)],
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn drift_ratio(&self, y: f64) -> f64 {
        let s = self.sigma.value(y);
        self.b.value(y) / (s * s)
    }

    fn next_knot(&self, side: usize, d: f64) -> f64 {
        let step = KNOT_SPACING.max(d / 8.0);
        let regular = ((d / step).floor() + 1.0) * step;
        let brk = self.breaks[side].iter().copied().find(|&p| p > d);
        match brk {
            Some(p) if p < regular => p,
            _ => regular,
        }
    }

    /// Makes sure knots reach distance `reach` on `side`.
    fn extend(&self, side: usize, reach: f64) -> Result<()> {
        if self.knots[side]
            .read()
            .expect("knot lock")
            .dist
            .last()
            .copied()
            .unwrap_or(0.0)
            >= reach
        {
            return Ok(());
        }
        let mut k = self.knots[side].write().expect("knot lock");
        let dir = if side == 0 { 1.0 } else { -1.0 };
        while *k.dist.last().expect("knots start at 0") < reach {
            let last = k.dist.len() - 1;
            let (d0, e0, v0) = (k.dist[last], k.exponent[last], k.value[last]);
            let d1 = self.next_knot(side, d0);
            let (x0, x1) = (dir * d0, dir * d1);
            let e1 = e0 + quadrature::integrate(|y| self.drift_ratio(y), x0, x1, &[])?;
            let v1 = v0 + self.integrate_density(x0, e0, x1)?;
            k.dist.push(d1);
            k.exponent.push(e1);
            k.value.push(v1);
        }
        Ok(())
    }

    /// `∫_{x0}^{x1} F`, given the exponent `e0` at `x0` and no breakpoints in between.
    fn integrate_density(&self, x0: f64, e0: f64, x1: f64) -> Result<f64> {
        let failure = RefCell::new(None);
        let v = quadrature::integrate(
            |y| match quadrature::integrate(|z| self.drift_ratio(z), x0, y, &[]) {
                Ok(e) => (-2.0 * (e0 + e)).exp(),
                Err(err) => {
                    failure.borrow_mut().get_or_insert(err);
                    f64::NAN
                }
            },
            x0,
            x1,
            &[],
        );
        match failure.into_inner() {
            Some(err) => Err(err),
            None => v,
        }
    }

    /// Knot anchoring `x`: (knot position, exponent, value).
    fn anchor(&self, x: f64) -> Result<(f64, f64, f64)> {
        let (side, dir) = side_of(x);
        let d = x.abs();
        self.extend(side, d)?;
        let k = self.knots[side].read().expect("knot lock");
        let i = k.dist.partition_point(|&p| p <= d) - 1;
        Ok((dir * k.dist[i], k.exponent[i], k.value[i]))
    }

    /// `∫₀ˣ b_ε/σ_ε²`.
    pub fn exponent(&self, x: f64) -> Result<f64> {
        let (x0, e0, _) = self.anchor(x)?;
        Ok(e0 + quadrature::integrate(|y| self.drift_ratio(y), x0, x, &[])?)
    }

    /// `F_ε(x)`.
    pub fn density(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(1.0);
        }
        Ok((-2.0 * self.exponent(x)?).exp())
    }

    /// `f_ε(x)`.
    pub fn value(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let (x0, e0, v0) = self.anchor(x)?;
        Ok(v0 + self.integrate_density(x0, e0, x)?)
    }

    /// `f_ε⁻¹(y)`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::NoBracket { target: y });
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let (side, dir) = side_of(y);
        let target = y.abs();
        let limit = SEARCH_SCALE * (1.0 + target);
        let mut reach = 1.0_f64;
        loop {
            self.extend(side, reach)?;
            let k = self.knots[side].read().expect("knot lock");
            if k.value.last().expect("knots start at 0").abs() >= target {
                break;
            }
            drop(k);
            if reach >= limit {
                return Err(Error::NoBracket { target: y });
            }
            reach = (reach * 2.0).min(limit);
        }
        let (lo, hi) = {
            let k = self.knots[side].read().expect("knot lock");
            let i = k.value.partition_point(|&v| v.abs() < target);
            (k.dist[i - 1], k.dist[i])
        };
        let (lo, hi) = if dir > 0.0 { (lo, hi) } else { (-hi, -lo) };
        let x = roots::solve_bracketed(
            |x| {
                let v = self.value(x).unwrap_or(f64::NAN);
                let d = self.density(x).unwrap_or(f64::NAN);
                (v, d)
            },
            y,
            lo,
            hi,
        );
        // a NaN iterate means the quadrature underneath failed; re-run to surface it
        self.value(x)?;
        Ok(x)
    }
}

pub fn scale_density(fam: &CoefficientFamily, eps: f64, x: f64) -> Result<f64> {
    fam.scale(eps)?.density(x)
}

pub fn scale_function(fam: &CoefficientFamily, eps: f64, x: f64) -> Result<f64> {
    fam.scale(eps)?.value(x)
}

pub fn scale_inverse(fam: &CoefficientFamily, eps: f64, y: f64) -> Result<f64> {
    fam.scale(eps)?.inverse(y)
}

/// Coefficients of `π_ε = f_ε(v_ε)`:
/// `ĝ_ε(x) = F_ε(f_ε⁻¹(x))·g_ε(f_ε⁻¹(x))`, `σ̂_ε(x) = F_ε(f_ε⁻¹(x))·σ_ε(f_ε⁻¹(x))`.
///
/// Evaluation failures inside the returned coefficients surface as NaN.
pub fn hat_coeffs(fam: &CoefficientFamily, eps: f64) -> Result<(ScalarCoefficient, ScalarCoefficient)> {
    let map = fam.scale(eps)?;
    let g = fam.g_eps.at(eps);
    let sigma = fam.sigma_eps.at(eps);
    let breaks: Arc<Vec<f64>> = Arc::new({
        let mut pts = Vec::new();
        for p in fam.breakpoints(eps) {
            pts.push(map.value(p)?);
        }
        pts
    });
    let (mg, bg) = (map.clone(), breaks.clone());
    let g_hat = ScalarCoefficient::state(format!("hat_g(eps={eps})"), move |x| {
        mg.inverse(x)
            .and_then(|v| Ok(mg.density(v)? * g.value(v)))
            .unwrap_or(f64::NAN)
    })
    .with_breakpoints(move |_| bg.to_vec());
    let g_sigma = ScalarCoefficient::state(format!("hat_sigma(eps={eps})"), move |x| {
        map.inverse(x)
            .and_then(|v| Ok(map.density(v)? * sigma.value(v)))
            .unwrap_or(f64::NAN)
    })
    .with_breakpoints(move |_| breaks.to_vec());
    Ok((g_hat, g_sigma))
}

/// `|f_ε(x) - f(x)|` for every `(ε, x)` pair: a pointwise check that the
/// supplied limit `f` is the limit of the scale functions.
pub fn scale_limit_gap(fam: &CoefficientFamily, eps_ladder: &[f64], xs: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let mut out = Vec::with_capacity(eps_ladder.len() * xs.len());
    for &eps in eps_ladder {
        let map = fam.scale(eps)?;
        for &x in xs {
            out.push((eps, x, (map.value(x)? - fam.limit_f.eval(x)).abs()));
        }
    }
    Ok(out)
}
