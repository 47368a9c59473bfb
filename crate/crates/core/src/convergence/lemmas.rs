//! Monte Carlo checks of the local-time identities for `u(X)`.
//!
//! Both checks integrate the driving process once and evaluate the transformed
//! process on the fly: for `Y = u(X)` the state-dependent quantities of `Y`
//! are computed from `X` directly (`u⁻¹(Y) = X`), so no inversion is needed.

use serde::Serialize;

use crate::piecewise::PiecewiseC2;
use crate::simulate::{self, LocalTimeObserver, NoiseBlock, PathObserver, Record, TimeGrid};
use crate::transforms::{ScalarCoefficient, SkewParam};
use crate::{Error, Result};

const REPORT_TIMES: usize = 100;
const FLOOR_PROBES: usize = 201;
/// Multiple of the standard error accepted as Monte Carlo noise.
pub const MC_Z: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualStats {
    /// Largest per-path residual at `T`.
    pub max: f64,
    /// Mean per-path residual at `T`.
    pub mean: f64,
    /// Mean per-path residual over the report times.
    pub time_mean: f64,
    /// Largest per-path residual over the report times.
    pub time_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LemmaDetails {
    /// `L^Y = ((u₁+u₂)/2)·L^X`.
    ScaledLocalTime {
        delta_y: f64,
        factor: f64,
        mean_local_time_x: f64,
        mean_local_time_y: f64,
        signed_mean: f64,
    },
    /// `E η(T) = u(x) + c_η E L^η(T) + E∫₀ᵀ g*(η) ds`.
    ExpectationBalance {
        c_eta: f64,
        u_x0: f64,
        mean_eta: f64,
        mean_local_time: f64,
        mean_drift_integral: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaResidualReport {
    pub lemma: u8,
    pub n_paths: usize,
    pub dt: f64,
    pub delta: f64,
    /// The headline residual: mean per-path residual (lemma 1) or the
    /// absolute expectation imbalance (lemma 3).
    pub residual: f64,
    /// `E L̂^X(T)` (lemma 1) or `c_η·E L̂^η(T)` (lemma 3): the scale the residual is judged against.
    pub reference: f64,
    pub mc_stderr: f64,
    pub within_mc_error: bool,
    pub stats: ResidualStats,
    pub details: LemmaDetails,
}

impl LemmaResidualReport {
    /// `residual / reference`, or 0 when both vanish.
    pub fn relative(&self) -> f64 {
        if self.residual == 0.0 {
            0.0
        } else {
            self.residual / self.reference.abs()
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stderr(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

fn within(residual: f64, se: f64) -> bool {
    residual <= MC_Z * se + 1e-12
}

fn report_steps(grid: &TimeGrid) -> Vec<usize> {
    Record::Every((grid.n_steps() / REPORT_TIMES).max(1)).steps(grid.n_steps())
}

/// Bandwidth for `Y = u(X)` matched to `delta` for `X`: the mean slope
/// `(u₁+u₂)/2` times `delta`.
pub fn matched_bandwidth(u: &PiecewiseC2, delta: f64) -> f64 {
    0.5 * (u.slope_left() + u.slope_right()) * delta
}

/// Floor `√dt·max σ_Y` over the window `|u(x)| < delta_y`, with `σ_Y = 𝔻u·σ`.
fn transformed_floor(u: &PiecewiseC2, sigma: &ScalarCoefficient, delta_y: f64, dt: f64) -> Result<f64> {
    let lo = u.invert(-delta_y)?;
    let hi = u.invert(delta_y)?;
    let mut m = 0.0_f64;
    for i in 0..FLOOR_PROBES {
        let x = lo + (hi - lo) * i as f64 / (FLOOR_PROBES - 1) as f64;
        m = m.max((u.sym_deriv(x) * sigma.value(x)).abs());
    }
    Ok(dt.sqrt() * m)
}

fn check_transformed_bandwidth(u: &PiecewiseC2, sigma: &ScalarCoefficient, delta_y: f64, dt: f64) -> Result<()> {
    if !(delta_y > 0.0 && delta_y.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {delta_y}"
        )));
    }
    let floor = transformed_floor(u, sigma, delta_y, dt)?;
    if delta_y < floor {
        return Err(Error::BandwidthTooSmall { delta: delta_y, floor });
    }
    Ok(())
}

/// Occupation estimate of `L^{u(X)}` fed with states of `X`.
struct TransformedLocalTime<'a> {
    u: &'a PiecewiseC2,
    sigma: &'a ScalarCoefficient,
    delta: f64,
    weight: f64,
    report: &'a [usize],
    next: usize,
    acc: f64,
    out: Vec<f64>,
}

impl<'a> TransformedLocalTime<'a> {
    fn new(u: &'a PiecewiseC2, sigma: &'a ScalarCoefficient, delta: f64, dt: f64, report: &'a [usize]) -> Self {
        TransformedLocalTime {
            u,
            sigma,
            delta,
            weight: dt / (2.0 * delta),
            report,
            next: 0,
            acc: 0.0,
            out: Vec::with_capacity(report.len()),
        }
    }
}

impl PathObserver for TransformedLocalTime<'_> {
    type Output = Vec<f64>;

    #[inline]
    fn observe(&mut self, step: usize, x: f64) {
        if self.report.get(self.next) == Some(&step) {
            self.out.push(self.acc);
            self.next += 1;
        }
        if self.u.eval(x).abs() < self.delta {
            let s = self.u.sym_deriv(x) * self.sigma.value(x);
            self.acc += s * s * self.weight;
        }
    }

    fn finish(self) -> Vec<f64> {
        self.out
    }
}

/// Lemma 1 check with the matched bandwidth for `Y`.
pub fn verify_lemma1(
    u: &PiecewiseC2,
    drift: &ScalarCoefficient,
    diffusion: &ScalarCoefficient,
    x0: f64,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    delta: f64,
) -> Result<LemmaResidualReport> {
    verify_lemma1_with(u, drift, diffusion, x0, grid, noise, delta, matched_bandwidth(u, delta))
}

/// Simulates `X`, forms `Y = u(X)` on the same noise and compares
/// `L̂^Y(t,0)` (bandwidth `delta_y`, weight `σ_Y = 𝔻u(X)σ(X)`) with
/// `((u₁+u₂)/2)·L̂^X(t,0)` (bandwidth `delta`) path by path.
#[allow(clippy::too_many_arguments)]
pub fn verify_lemma1_with(
    u: &PiecewiseC2,
    drift: &ScalarCoefficient,
    diffusion: &ScalarCoefficient,
    x0: f64,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    delta: f64,
    delta_y: f64,
) -> Result<LemmaResidualReport> {
    if *grid != noise.grid() {
        return Err(Error::InvalidInput("time grid does not match the noise grid".into()));
    }
    let dt = grid.dt();
    diffusion.require_state()?;
    simulate::check_bandwidth(diffusion, delta, dt)?;
    check_transformed_bandwidth(u, diffusion, delta_y, dt)?;
    let factor = 0.5 * (u.slope_left() + u.slope_right());
    let report = report_steps(grid);
    let out = simulate::simulate_observed(drift, diffusion, x0, noise, |_| {
        (
            LocalTimeObserver::new(diffusion, delta, dt, &report),
            TransformedLocalTime::new(u, diffusion, delta_y, dt, &report),
        )
    })?;

    let n = out.len();
    let last = report.len() - 1;
    let mut terminal = Vec::with_capacity(n);
    let mut signed = Vec::with_capacity(n);
    let (mut lx, mut ly) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut time_sum, mut time_max) = (0.0, 0.0_f64);
    for (x, y) in &out {
        for (a, b) in x.iter().zip(y) {
            let r = (b - factor * a).abs();
            time_sum += r;
            time_max = time_max.max(r);
        }
        signed.push(y[last] - factor * x[last]);
        terminal.push((y[last] - factor * x[last]).abs());
        lx.push(x[last]);
        ly.push(y[last]);
    }
    let residual = mean(&terminal);
    let signed_mean = mean(&signed);
    let se = stderr(&signed);
    Ok(LemmaResidualReport {
        lemma: 1,
        n_paths: n,
        dt,
        delta,
        residual,
        reference: mean(&lx),
        mc_stderr: se,
        within_mc_error: within(signed_mean.abs(), se),
        stats: ResidualStats {
            max: terminal.iter().copied().fold(0.0, f64::max),
            mean: residual,
            time_mean: time_sum / (n * report.len()) as f64,
            time_max,
        },
        details: LemmaDetails::ScaledLocalTime {
            delta_y,
            factor,
            mean_local_time_x: mean(&lx),
            mean_local_time_y: mean(&ly),
            signed_mean,
        },
    })
}

/// `c_η = (u₂ - u₁ + β(u₂ + u₁)) / (u₂ + u₁ + β(u₂ - u₁))`.
pub fn lemma3_constant(u: &PiecewiseC2, beta: SkewParam) -> f64 {
    let (u1, u2, b) = (u.slope_left(), u.slope_right(), beta.value());
    (u2 - u1 + b * (u2 + u1)) / (u2 + u1 + b * (u2 - u1))
}

/// Per-path terms of the Lemma 3 balance: `η(T)`, `L̂^η(T)`, `Σ g*(η_k) dt`.
struct BalanceObserver<'a> {
    u: &'a PiecewiseC2,
    g: &'a ScalarCoefficient,
    sigma: &'a ScalarCoefficient,
    delta: f64,
    dt: f64,
    n_steps: usize,
    local_time: f64,
    drift_integral: f64,
    eta: f64,
}

impl PathObserver for BalanceObserver<'_> {
    type Output = (f64, f64, f64);

    #[inline]
    fn observe(&mut self, step: usize, x: f64) {
        let eta = self.u.eval(x);
        if step == self.n_steps {
            self.eta = eta;
            return;
        }
        let du = self.u.sym_deriv(x);
        let s = self.sigma.value(x);
        if eta.abs() < self.delta {
            let ss = du * s;
            self.local_time += ss * ss * self.dt / (2.0 * self.delta);
        }
        let g_star = du * self.g.value(x) + 0.5 * s * s * self.u.curvature_density(x);
        self.drift_integral += g_star * self.dt;
    }

    fn finish(self) -> (f64, f64, f64) {
        (self.eta, self.local_time, self.drift_integral)
    }
}

/// Simulates `ξ` (skew parameter `β`, coefficients `g, σ`), forms `η = u(ξ)`
/// and measures `|E η(T) - u(x₀) - c_η E L̂^η(T,0) - E∫₀ᵀ g*(η) ds|`.
/// The stochastic integral has mean zero and is not estimated.
#[allow(clippy::too_many_arguments)]
pub fn verify_lemma3(
    u: &PiecewiseC2,
    beta: SkewParam,
    g: &ScalarCoefficient,
    sigma: &ScalarCoefficient,
    x0: f64,
    grid: &TimeGrid,
    noise: &NoiseBlock,
    delta: f64,
) -> Result<LemmaResidualReport> {
    if *grid != noise.grid() {
        return Err(Error::InvalidInput("time grid does not match the noise grid".into()));
    }
    g.require_state()?;
    sigma.require_state()?;
    let dt = grid.dt();
    check_transformed_bandwidth(u, sigma, delta, dt)?;
    let c_eta = lemma3_constant(u, beta);
    let u_x0 = u.eval(x0);
    let out = simulate::simulate_skew_observed(beta, g, sigma, x0, noise, |_| BalanceObserver {
        u,
        g,
        sigma,
        delta,
        dt,
        n_steps: grid.n_steps(),
        local_time: 0.0,
        drift_integral: 0.0,
        eta: f64::NAN,
    })?;

    let d: Vec<f64> = out.iter().map(|(eta, l, gi)| eta - u_x0 - c_eta * l - gi).collect();
    let abs_d: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let mean_eta = mean(&out.iter().map(|o| o.0).collect::<Vec<_>>());
    let mean_lt = mean(&out.iter().map(|o| o.1).collect::<Vec<_>>());
    let mean_gi = mean(&out.iter().map(|o| o.2).collect::<Vec<_>>());
    let residual = mean(&d).abs();
    let se = stderr(&d);
    let per_path_mean = mean(&abs_d);
    let per_path_max = abs_d.iter().copied().fold(0.0, f64::max);
    Ok(LemmaResidualReport {
        lemma: 3,
        n_paths: out.len(),
        dt,
        delta,
        residual,
        reference: c_eta * mean_lt,
        mc_stderr: se,
        within_mc_error: within(residual, se),
        stats: ResidualStats {
            max: per_path_max,
            mean: per_path_mean,
            time_mean: per_path_mean,
            time_max: per_path_max,
        },
        details: LemmaDetails::ExpectationBalance {
            c_eta,
            u_x0,
            mean_eta,
            mean_local_time: mean_lt,
            mean_drift_integral: mean_gi,
        },
    })
}
