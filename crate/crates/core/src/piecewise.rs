//! Piecewise-C² monotone maps glued at the origin.
//!
//! A [`PiecewiseC2`] is built from two [`SmoothBranch`]es, each anchored at
//! `0` and strictly increasing on its own half-line. The glued map may have a
//! kink at zero, so its first derivative is taken in the symmetric sense and
//! its second derivative is a measure: an atom `u₂ - u₁` at zero plus the
//! absolutely continuous density `A_u` (see [`SecondDerivMeasure`]).

use std::fmt;
use std::sync::Arc;

use crate::roots;
use crate::{Error, Result};

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Three-way sign with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Which half-line a branch lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn direction(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

/// Points (on `[0, 10]`, reflected for the left side) used to validate branches.
const PROBE_POINTS: usize = 201;
const PROBE_EXTENT: f64 = 10.0;
const ANCHOR_TOL: f64 = 1e-12;

/// One smooth half of a piecewise map: value and two analytic derivatives.
#[derive(Clone)]
pub struct SmoothBranch {
    eval: RealFn,
    d1: RealFn,
    d2: RealFn,
    side: Side,
}

impl fmt::Debug for SmoothBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothBranch")
            .field("side", &self.side)
            .field("d1_at_0", &(self.d1)(0.0))
            .finish()
    }
}

impl SmoothBranch {
    /// Builds a branch and checks `eval(0) = 0` and `d1 > 0` (finite `d2`) on
    /// a probe grid over the branch's half-line.
    pub fn new<E, D1, D2>(side: Side, eval: E, d1: D1, d2: D2) -> Result<Self>
    where
        E: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let branch = SmoothBranch {
            eval: Arc::new(eval),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
            side,
        };
        branch.validate()?;
        Ok(branch)
    }

    /// `x ↦ slope·x`.
    pub fn linear(side: Side, slope: f64) -> Result<Self> {
        Self::new(side, move |x| slope * x, move |_| slope, |_| 0.0)
    }

    pub fn identity(side: Side) -> Self {
        Self::linear(side, 1.0).expect("identity branch is valid")
    }

    fn validate(&self) -> Result<()> {
        let at0 = (self.eval)(0.0);
        if at0.is_nan() || at0.abs() > ANCHOR_TOL {
            return Err(Error::InvalidBranch(format!(
                "{:?} branch must vanish at 0, got {at0}",
                self.side
            )));
        }
        let dir = self.side.direction();
        for i in 0..PROBE_POINTS {
            let x = dir * PROBE_EXTENT * i as f64 / (PROBE_POINTS - 1) as f64;
            let d1 = (self.d1)(x);
            let d2 = (self.d2)(x);
            if !(d1 > 0.0 && d1.is_finite()) {
                return Err(Error::InvalidBranch(format!(
                    "{:?} branch derivative must be positive, got {d1} at x = {x}",
                    self.side
                )));
            }
            if !d2.is_finite() {
                return Err(Error::InvalidBranch(format!(
                    "{:?} branch second derivative is not finite at x = {x}",
                    self.side
                )));
            }
        }
        Ok(())
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn d1(&self, x: f64) -> f64 {
        (self.d1)(x)
    }

    pub fn d2(&self, x: f64) -> f64 {
        (self.d2)(x)
    }

    /// The branch `x ↦ self(scale·x)`, with the chain rule applied to its
    /// derivatives. Used to compose with the skew map on one half-line.
    pub(crate) fn rescaled(&self, scale: f64) -> SmoothBranch {
        let (e, d1, d2) = (self.eval.clone(), self.d1.clone(), self.d2.clone());
        SmoothBranch {
            eval: Arc::new(move |x| e(scale * x)),
            d1: Arc::new(move |x| scale * d1(scale * x)),
            d2: Arc::new(move |x| scale * scale * d2(scale * x)),
            side: self.side,
        }
    }
}

/// A strictly increasing map `u` equal to `left` on `x ≤ 0` and `right` on `x ≥ 0`.
#[derive(Clone, Debug)]
pub struct PiecewiseC2 {
    left: SmoothBranch,
    right: SmoothBranch,
}

impl PiecewiseC2 {
    pub fn new(left: SmoothBranch, right: SmoothBranch) -> Result<Self> {
        if left.side != Side::Left || right.side != Side::Right {
            return Err(Error::InvalidBranch("expected a left branch and a right branch".into()));
        }
        Ok(PiecewiseC2 { left, right })
    }

    pub fn identity() -> Self {
        PiecewiseC2 {
            left: SmoothBranch::identity(Side::Left),
            right: SmoothBranch::identity(Side::Right),
        }
    }

    /// Two linear branches with slopes `u1` (left) and `u2` (right).
    pub fn linear(u1: f64, u2: f64) -> Result<Self> {
        Self::new(
            SmoothBranch::linear(Side::Left, u1)?,
            SmoothBranch::linear(Side::Right, u2)?,
        )
    }

    pub fn left(&self) -> &SmoothBranch {
        &self.left
    }

    pub fn right(&self) -> &SmoothBranch {
        &self.right
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x < 0.0 {
            self.left.eval(x)
        } else if x > 0.0 {
            self.right.eval(x)
        } else {
            0.0
        }
    }

    /// `u₁ = u₁'(0)`.
    pub fn slope_left(&self) -> f64 {
        self.left.d1(0.0)
    }

    /// `u₂ = u₂'(0)`.
    pub fn slope_right(&self) -> f64 {
        self.right.d1(0.0)
    }

    /// Symmetric derivative: the branch derivative off zero, `(u₁ + u₂)/2` at zero.
    pub fn sym_deriv(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.right.d1(x)
        } else if x < 0.0 {
            self.left.d1(x)
        } else {
            0.5 * (self.slope_left() + self.slope_right())
        }
    }

    /// Density `A_u` of the second distributional derivative.
    pub fn curvature_density(&self, x: f64) -> f64 {
        if x > 0.0 {
            self.right.d2(x)
        } else if x < 0.0 {
            self.left.d2(x)
        } else {
            0.5 * (self.left.d2(0.0) + self.right.d2(0.0))
        }
    }

    pub fn second_deriv_measure(&self) -> SecondDerivMeasure {
        SecondDerivMeasure {
            atom_at_zero: self.slope_right() - self.slope_left(),
            left_d2: self.left.d2.clone(),
            right_d2: self.right.d2.clone(),
        }
    }

    /// Numerical inverse `u⁻¹(y)`; the result carries the sign of `y`.
    pub fn invert(&self, y: f64) -> Result<f64> {
        roots::invert_anchored(|x| (self.eval(x), self.sym_deriv(x)), y)
    }
}

/// Second distributional derivative `n_u(dx) = (u₂ - u₁) δ₀(dx) + A_u(x) dx`.
#[derive(Clone)]
pub struct SecondDerivMeasure {
    pub atom_at_zero: f64,
    left_d2: RealFn,
    right_d2: RealFn,
}

impl fmt::Debug for SecondDerivMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecondDerivMeasure")
            .field("atom_at_zero", &self.atom_at_zero)
            .finish_non_exhaustive()
    }
}

impl SecondDerivMeasure {
    /// `½[(u₂'' + u₁'') + (u₂'' - u₁'') sgn x]`.
    pub fn density(&self, x: f64) -> f64 {
        let (l, r) = ((self.left_d2)(x), (self.right_d2)(x));
        0.5 * ((r + l) + (r - l) * sgn(x))
    }
}

/// Convenience wrapper for [`PiecewiseC2::sym_deriv`].
pub fn sym_deriv(u: &PiecewiseC2, x: f64) -> f64 {
    u.sym_deriv(x)
}

/// Convenience wrapper for [`PiecewiseC2::second_deriv_measure`].
pub fn second_deriv_measure(u: &PiecewiseC2) -> SecondDerivMeasure {
    u.second_deriv_measure()
}

/// Convenience wrapper for [`PiecewiseC2::invert`].
pub fn invert(u: &PiecewiseC2, y: f64) -> Result<f64> {
    u.invert(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn curved() -> PiecewiseC2 {
        PiecewiseC2::new(
            SmoothBranch::identity(Side::Left),
            SmoothBranch::new(Side::Right, |x| x + x * x, |x| 1.0 + 2.0 * x, |_| 2.0).unwrap(),
        )
        .unwrap()
    }

    fn expm1_right() -> PiecewiseC2 {
        PiecewiseC2::new(
            SmoothBranch::identity(Side::Left),
            SmoothBranch::new(Side::Right, f64::exp_m1, f64::exp, f64::exp).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn sgn_three_cases() {
        assert_eq!(sgn(3.7), 1.0);
        assert_eq!(sgn(0.0), 0.0);
        assert_eq!(sgn(-0.0), 0.0);
        assert_eq!(sgn(-2.0), -1.0);
    }

    #[test]
    fn sym_deriv_examples() {
        let kink = PiecewiseC2::linear(1.0, 2.0).unwrap();
        assert_eq!(kink.sym_deriv(0.0), 1.5);
        let id = PiecewiseC2::identity();
        for x in [-3.0, 0.0, 0.25, 7.0] {
            assert_eq!(id.sym_deriv(x), 1.0);
        }
        assert_eq!(curved().sym_deriv(0.5), 2.0);
    }

    #[test]
    fn second_deriv_measure_examples() {
        let m = PiecewiseC2::linear(1.0, 2.0).unwrap().second_deriv_measure();
        assert_eq!(m.atom_at_zero, 1.0);
        for x in [-1.0, 0.0, 1.0] {
            assert_eq!(m.density(x), 0.0);
        }

        let m = PiecewiseC2::identity().second_deriv_measure();
        assert_eq!(m.atom_at_zero, 0.0);
        assert_eq!(m.density(0.3), 0.0);

        let m = curved().second_deriv_measure();
        assert_eq!(m.atom_at_zero, 0.0);
        assert_eq!(m.density(1.0), 2.0);
        assert_eq!(m.density(-1.0), 0.0);
        assert_eq!(m.density(0.0), 1.0);
        assert_eq!(curved().curvature_density(0.0), 1.0);
    }

    #[test]
    fn invert_examples() {
        let kink = PiecewiseC2::linear(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(kink.invert(3.0).unwrap(), 1.5, epsilon = 1e-12);
        assert_eq!(kink.invert(0.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(expm1_right().invert(e - 1.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn invert_out_of_range_is_no_bracket() {
        let bounded = PiecewiseC2::new(
            SmoothBranch::identity(Side::Left),
            SmoothBranch::new(
                Side::Right,
                f64::tanh,
                |x| 1.0 / x.cosh().powi(2),
                |x| -2.0 * x.tanh() / x.cosh().powi(2),
            )
            .unwrap(),
        );
        // the probe grid reaches x = 10 where tanh' is still positive
        let bounded = bounded.unwrap();
        assert!(matches!(bounded.invert(1.5), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn branch_validation() {
        assert!(SmoothBranch::new(Side::Right, |x| x + 1.0, |_| 1.0, |_| 0.0).is_err());
        assert!(SmoothBranch::linear(Side::Left, -1.0).is_err());
        assert!(SmoothBranch::linear(Side::Right, 0.0).is_err());
        // positivity is only required on the branch's own side
        assert!(SmoothBranch::new(Side::Right, |x| x * x + x, |x| 2.0 * x + 1.0, |_| 2.0).is_ok());
        assert!(PiecewiseC2::new(SmoothBranch::identity(Side::Right), SmoothBranch::identity(Side::Right)).is_err());
    }

    #[test]
    fn centered_difference_converges_to_sym_deriv() {
        let u = curved();
        let kink = PiecewiseC2::linear(1.0, 2.0).unwrap();
        for x in [-0.7, 0.3, 1.1] {
            let h = 1e-4;
            let cd = (u.eval(x + h) - u.eval(x - h)) / (2.0 * h);
            assert!((cd - u.sym_deriv(x)).abs() < 1e-6);
        }
        // at the kink the ladder converges to (u₁ + u₂)/2
        let mut prev = f64::INFINITY;
        for h in [1e-1, 1e-2, 1e-3] {
            let v = PiecewiseC2::new(
                SmoothBranch::new(Side::Left, |x| x - x * x, |x| 1.0 - 2.0 * x, |_| -2.0).unwrap(),
                SmoothBranch::new(Side::Right, |x| 2.0 * x + x * x, |x| 2.0 + 2.0 * x, |_| 2.0).unwrap(),
            )
            .unwrap();
            let err = ((v.eval(h) - v.eval(-h)) / (2.0 * h) - v.sym_deriv(0.0)).abs();
            assert!(err <= prev);
            prev = err;
        }
        let cd = (kink.eval(1e-6) - kink.eval(-1e-6)) / 2e-6;
        assert_abs_diff_eq!(cd, 1.5, epsilon = 1e-9);
    }
}
