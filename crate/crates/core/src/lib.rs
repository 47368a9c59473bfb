//! Numerical toolkit for one-dimensional stochastic differential equations
//! that involve the local time of the solution at zero (skew diffusions).
//!
//! The crate is organised bottom-up:
//!
//! - [`piecewise`]: two-branch monotone maps, their symmetric derivative and
//!   second distributional derivative (an atom at zero plus a density).
//! - [`quadrature`]: adaptive Gauss–Kronrod integration with breakpoints.
//! - [`transforms`]: the skew map `κ` and its inverse, the tilde coefficient
//!   map, scale functions of ε-families and the transformed coefficients.
//! - [`simulate`]: seeded Brownian noise, Euler–Maruyama ensembles, skew SDEs
//!   via the `κ`-transform, and occupation-time local-time estimation.
//! - [`convergence`]: residual checks of the limit conditions, empirical
//!   distribution distances and Monte Carlo convergence studies.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convergence;
mod error;
pub mod piecewise;
pub mod quadrature;
pub mod roots;
pub mod simulate;
pub mod transforms;

pub use error::{Error, Result};
