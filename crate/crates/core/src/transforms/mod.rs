//! Coordinate and coefficient transforms.
//!
//! The skew map `κ` stretches the half-lines by `1 ∓ β`; pulling coefficients
//! back through it (the "tilde" map) turns an SDE with a `β·L(t,0)` term into
//! an ordinary Itô equation. Scale functions of ε-families and the coefficient
//! pairs obtained by changing variables live in [`scale`].

mod scale;

use std::fmt;
use std::sync::{Arc, Mutex};

use crate::piecewise::{sgn, PiecewiseC2};
use crate::quadrature;
use crate::{Error, Result};

pub use scale::{hat_coeffs, scale_density, scale_function, scale_inverse, scale_limit_gap, ScaleMap};

/// Skew parameter `β` with `|β| < 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SkewParam(f64);

impl SkewParam {
    pub fn new(beta: f64) -> Result<Self> {
        if beta.is_finite() && beta.abs() < 1.0 {
            Ok(SkewParam(beta))
        } else {
            Err(Error::InvalidSkew(beta))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `κ(x)`: `(1-β)x` for `x < 0`, `(1+β)x` for `x ≥ 0`.
    pub fn kappa(self, x: f64) -> f64 {
        if x < 0.0 {
            (1.0 - self.0) * x
        } else {
            (1.0 + self.0) * x
        }
    }

    /// `φ = κ⁻¹`.
    pub fn phi(self, x: f64) -> f64 {
        if x < 0.0 {
            x / (1.0 - self.0)
        } else {
            x / (1.0 + self.0)
        }
    }
}

pub fn kappa(beta: SkewParam, x: f64) -> f64 {
    beta.kappa(x)
}

pub fn phi(beta: SkewParam, x: f64) -> f64 {
    beta.phi(x)
}

type CoeffFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type BreakFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// A coefficient `(x, ε) ↦ value`, optionally carrying the points (as a
/// function of ε) where it is not smooth. State coefficients ignore ε.
#[derive(Clone)]
pub struct ScalarCoefficient {
    label: String,
    func: CoeffFn,
    breaks: Option<BreakFn>,
    eps_dependent: bool,
}

impl fmt::Debug for ScalarCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarCoefficient")
            .field("label", &self.label)
            .field("eps_dependent", &self.eps_dependent)
            .finish_non_exhaustive()
    }
}

impl ScalarCoefficient {
    /// A coefficient of the state only.
    pub fn state<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ScalarCoefficient {
            label: label.into(),
            func: Arc::new(move |x, _| f(x)),
            breaks: None,
            eps_dependent: false,
        }
    }

    /// A coefficient depending on the state and on ε.
    pub fn family<F>(label: impl Into<String>, f: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        ScalarCoefficient {
            label: label.into(),
            func: Arc::new(f),
            breaks: None,
            eps_dependent: true,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::state(format!("{c}"), move |_| c)
    }

    pub fn with_breakpoints<B>(mut self, b: B) -> Self
    where
        B: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        self.breaks = Some(Arc::new(b));
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_eps_dependent(&self) -> bool {
        self.eps_dependent
    }

    pub fn eval(&self, x: f64, eps: f64) -> f64 {
        (self.func)(x, eps)
    }

    /// Evaluates a state coefficient. ε-dependent coefficients must be bound
    /// with [`at`](Self::at) first; callers check [`is_eps_dependent`](Self::is_eps_dependent).
    pub fn value(&self, x: f64) -> f64 {
        (self.func)(x, f64::NAN)
    }

    pub fn breakpoints(&self, eps: f64) -> Vec<f64> {
        self.breaks.as_ref().map(|b| b(eps)).unwrap_or_default()
    }

    /// Binds ε, producing a state coefficient.
    pub fn at(&self, eps: f64) -> ScalarCoefficient {
        if !self.eps_dependent {
            return self.clone();
        }
        let func = self.func.clone();
        let breaks = self.breaks.clone();
        ScalarCoefficient {
            label: format!("{}@eps={eps}", self.label),
            func: Arc::new(move |x, _| func(x, eps)),
            breaks: breaks.map(|b| -> BreakFn { Arc::new(move |_| b(eps)) }),
            eps_dependent: false,
        }
    }

    pub(crate) fn require_state(&self) -> Result<()> {
        if self.eps_dependent {
            Err(Error::UnboundEps(self.label.clone()))
        } else {
            Ok(())
        }
    }
}

/// `f̃(x) = f(κ(x)) / (1 + β·sgn x)`.
pub fn tilde_coeff(f: &ScalarCoefficient, beta: SkewParam) -> ScalarCoefficient {
    let inner = f.clone();
    let b = beta.value();
    let mut out = ScalarCoefficient {
        label: format!("tilde({})", f.label),
        func: Arc::new(move |x, eps| inner.eval(beta.kappa(x), eps) / (1.0 + b * sgn(x))),
        breaks: None,
        eps_dependent: f.eps_dependent,
    };
    let src = f.clone();
    out.breaks = Some(Arc::new(move |eps| {
        let mut pts: Vec<f64> = src.breakpoints(eps).into_iter().map(|p| beta.phi(p)).collect();
        pts.push(0.0);
        pts
    }));
    out
}

/// Limit skew constant `α = (f₁ - f₂)/(f₁ + f₂)` from the one-sided slopes at 0.
pub fn alpha_limit(f1: f64, f2: f64) -> f64 {
    (f1 - f2) / (f1 + f2)
}

/// `τ = u ∘ κ`, with branches `u₁((1-β)x)` and `u₂((1+β)x)`.
pub fn compose_tau(u: &PiecewiseC2, beta: SkewParam) -> PiecewiseC2 {
    let b = beta.value();
    PiecewiseC2::new(u.left().rescaled(1.0 - b), u.right().rescaled(1.0 + b)).expect("rescaling preserves branch sides")
}

/// `g*(x) = 𝔻u(v)·g(v) + ½σ²(v)·A_u(v)` and `σ*(x) = 𝔻u(v)·σ(v)` with `v = u⁻¹(x)`.
///
/// Inversion failures surface as NaN values, which the simulators reject as
/// non-finite states.
pub fn star_coeffs(
    u: &PiecewiseC2,
    g: &ScalarCoefficient,
    sigma: &ScalarCoefficient,
) -> (ScalarCoefficient, ScalarCoefficient) {
    let (ug, gg, sg) = (u.clone(), g.clone(), sigma.clone());
    let measure = u.second_deriv_measure();
    let g_star = ScalarCoefficient {
        label: format!("star_g({})", g.label),
        func: Arc::new(move |x, eps| match ug.invert(x) {
            Ok(v) => {
                let s = sg.eval(v, eps);
                ug.sym_deriv(v) * gg.eval(v, eps) + 0.5 * s * s * measure.density(v)
            }
            Err(_) => f64::NAN,
        }),
        breaks: Some(Arc::new(|_| vec![0.0])),
        eps_dependent: g.eps_dependent || sigma.eps_dependent,
    };
    let (us, ss) = (u.clone(), sigma.clone());
    let sigma_star = ScalarCoefficient {
        label: format!("star_sigma({})", sigma.label),
        func: Arc::new(move |x, eps| match us.invert(x) {
            Ok(v) => us.sym_deriv(v) * ss.eval(v, eps),
            Err(_) => f64::NAN,
        }),
        breaks: Some(Arc::new(|_| vec![0.0])),
        eps_dependent: sigma.eps_dependent,
    };
    (g_star, sigma_star)
}

/// Constants `0 < λ ≤ Λ` of the class `L(λ, Λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassBounds {
    pub lambda: f64,
    pub big_lambda: f64,
}

/// Grid on which class membership is checked: 2001 points on `[-10, 10]`.
pub const VALIDATION_EXTENT: f64 = 10.0;
pub const VALIDATION_POINTS: usize = 2001;

/// Inputs for [`CoefficientFamily::new`].
#[derive(Clone, Debug)]
pub struct FamilySpec {
    pub b_eps: ScalarCoefficient,
    pub g_eps: ScalarCoefficient,
    pub sigma_eps: ScalarCoefficient,
    pub limit_g: ScalarCoefficient,
    pub limit_sigma: ScalarCoefficient,
    pub limit_f: PiecewiseC2,
    pub bounds: ClassBounds,
}

/// An ε-family `(b_ε, g_ε, σ_ε)` with its limit data `(g, σ, f)`.
pub struct CoefficientFamily {
    pub b_eps: ScalarCoefficient,
    pub g_eps: ScalarCoefficient,
    pub sigma_eps: ScalarCoefficient,
    pub limit_g: ScalarCoefficient,
    pub limit_sigma: ScalarCoefficient,
    pub limit_f: PiecewiseC2,
    pub bounds: ClassBounds,
    scale_cache: Mutex<Vec<(u64, Arc<ScaleMap>)>>,
}

impl fmt::Debug for CoefficientFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientFamily")
            .field("b_eps", &self.b_eps.label)
            .field("g_eps", &self.g_eps.label)
            .field("sigma_eps", &self.sigma_eps.label)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl CoefficientFamily {
    /// Builds the family and checks, for every ε in `eps_ladder`, that
    /// `(g_ε, σ_ε²) ∈ L(λ, Λ)` and `|∫₀ˣ b_ε/σ_ε²| ≤ Λ` on the validation grid,
    /// and that `(g, σ²) ∈ L(λ, Λ)` for the limit coefficients.
    pub fn new(spec: FamilySpec, eps_ladder: &[f64]) -> Result<Self> {
        let ClassBounds { lambda, big_lambda } = spec.bounds;
        if !(lambda > 0.0 && lambda <= big_lambda && big_lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "class bounds need 0 < lambda <= Lambda < inf, got ({lambda}, {big_lambda})"
            )));
        }
        spec.limit_g.require_state()?;
        spec.limit_sigma.require_state()?;
        let fam = CoefficientFamily {
            b_eps: spec.b_eps,
            g_eps: spec.g_eps,
            sigma_eps: spec.sigma_eps,
            limit_g: spec.limit_g,
            limit_sigma: spec.limit_sigma,
            limit_f: spec.limit_f,
            bounds: spec.bounds,
            scale_cache: Mutex::new(Vec::new()),
        };
        let grid = validation_grid(&[]);
        check_class(&fam.limit_g, &fam.limit_sigma, f64::NAN, &grid, fam.bounds, "limit")?;
        for &eps in eps_ladder {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
            }
            let grid = validation_grid(&fam.breakpoints(eps));
            check_class(&fam.g_eps, &fam.sigma_eps, eps, &grid, fam.bounds, "eps-family")?;
            fam.check_drift_integral(eps, &grid)?;
        }
        Ok(fam)
    }

    /// Sorted union of the declared breakpoints of `b_ε` and `σ_ε` at `eps`.
    pub fn breakpoints(&self, eps: f64) -> Vec<f64> {
        let mut pts = self.b_eps.breakpoints(eps);
        pts.extend(self.sigma_eps.breakpoints(eps));
        pts.extend(self.g_eps.breakpoints(eps));
        pts.retain(|p| p.is_finite());
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Sorted union of the declared breakpoints of the limit coefficients, plus 0.
    pub fn limit_breakpoints(&self) -> Vec<f64> {
        let mut pts = self.limit_g.breakpoints(f64::NAN);
        pts.extend(self.limit_sigma.breakpoints(f64::NAN));
        pts.push(0.0);
        pts.retain(|p| p.is_finite());
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    fn check_drift_integral(&self, eps: f64, grid: &[f64]) -> Result<()> {
        let bps = self.breakpoints(eps);
        let integrand = |y: f64| {
            let s = self.sigma_eps.eval(y, eps);
            self.b_eps.eval(y, eps) / (s * s)
        };
        let limit = self.bounds.big_lambda * (1.0 + 1e-9);
        let zero = grid.partition_point(|&x| x < 0.0);
        // integrate outward from 0 along each half of the grid
        for half in [&grid[zero..], &grid[..zero]] {
            let mut acc = 0.0;
            let mut prev = 0.0;
            let ordered: Vec<f64> = if half.first().is_some_and(|&x| x < 0.0) {
                half.iter().rev().copied().collect()
            } else {
                half.to_vec()
            };
            for x in ordered {
                acc += quadrature::integrate(integrand, prev, x, &bps)?;
                prev = x;
                if acc.abs() > limit {
                    return Err(Error::ClassViolation(format!(
                        "|int_0^x b_eps/sigma_eps^2| = {} > Lambda at x = {x}, eps = {eps}",
                        acc.abs()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The cached scale map for `eps`, built on first use.
    pub fn scale(&self, eps: f64) -> Result<Arc<ScaleMap>> {
        let key = eps.to_bits();
        let mut cache = self.scale_cache.lock().expect("scale cache poisoned");
        if let Some((_, m)) = cache.iter().find(|(k, _)| *k == key) {
            return Ok(m.clone());
        }
        let map = Arc::new(ScaleMap::new(self, eps)?);
        cache.push((key, map.clone()));
        Ok(map)
    }
}

fn validation_grid(extra: &[f64]) -> Vec<f64> {
    let n = VALIDATION_POINTS;
    let mut pts: Vec<f64> = (0..n)
        .map(|i| -VALIDATION_EXTENT + 2.0 * VALIDATION_EXTENT * i as f64 / (n - 1) as f64)
        .collect();
    pts.extend(extra.iter().copied().filter(|p| p.is_finite()));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

fn check_class(
    g: &ScalarCoefficient,
    sigma: &ScalarCoefficient,
    eps: f64,
    grid: &[f64],
    bounds: ClassBounds,
    what: &str,
) -> Result<()> {
    let slack = 1e-12;
    for &x in grid {
        let gv = g.eval(x, eps);
        let s = sigma.eval(x, eps);
        let a = s * s;
        if !(gv.abs() <= bounds.big_lambda + slack) {
            return Err(Error::ClassViolation(format!(
                "{what}: |g({x})| = {} exceeds Lambda = {} (eps = {eps})",
                gv.abs(),
                bounds.big_lambda
            )));
        }
        if !(a >= bounds.lambda - slack && a <= bounds.big_lambda + slack) {
            return Err(Error::ClassViolation(format!(
                "{what}: sigma^2({x}) = {a} outside [{}, {}] (eps = {eps})",
                bounds.lambda, bounds.big_lambda
            )));
        }
    }
    Ok(())
}
