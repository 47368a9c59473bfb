//! Fixtures shared by the acceptance suite.

use std::fmt;
use std::time::Instant;

use skewlab_core::piecewise::PiecewiseC2;
use skewlab_core::transforms::{ClassBounds, CoefficientFamily, FamilySpec, ScalarCoefficient};

/// `√(2/π) = E|N(0,1)|`.
pub const MEAN_ABS_NORMAL: f64 = 0.797_884_560_802_865_4;

/// The family `b_ε = (c/2ε)·1[−ε,ε]`, `g_ε ≡ 0`, `σ_ε ≡ 1`, with limit
/// scale map slopes `e^c` (left) and `e^{−c}` (right).
pub fn indicator_family(c: f64, ladder: &[f64]) -> CoefficientFamily {
    let b = ScalarCoefficient::family("(c/(2*eps))*indicator(-eps, eps, x)", move |x: f64, eps: f64| {
        if x.abs() <= eps {
            c / (2.0 * eps)
        } else {
            0.0
        }
    })
    .with_breakpoints(|eps| vec![-eps, eps]);
    let spec = FamilySpec {
        b_eps: b,
        g_eps: ScalarCoefficient::constant(0.0),
        sigma_eps: ScalarCoefficient::constant(1.0),
        limit_g: ScalarCoefficient::constant(0.0),
        limit_sigma: ScalarCoefficient::constant(1.0),
        limit_f: PiecewiseC2::linear(c.exp(), (-c).exp()).expect("positive slopes"),
        bounds: ClassBounds {
            lambda: 0.5,
            big_lambda: 2.0,
        },
    };
    CoefficientFamily::new(spec, ladder).expect("the indicator family is in the class")
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean.
pub fn stderr(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

pub fn fraction_positive(v: &[f64]) -> f64 {
    v.iter().filter(|&&x| x > 0.0).count() as f64 / v.len() as f64
}

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: String,
    pub title: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.1} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

/// Times `check`, which returns `(pass, detail)`.
pub fn timed<F>(id: &str, title: &str, check: F) -> Outcome
where
    F: FnOnce() -> (bool, String),
{
    let start = Instant::now();
    let (pass, detail) = check();
    Outcome {
        id: id.into(),
        title: title.into(),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}
