//! Numerical checks of the limit theorem for ε-families.
//!
//! Conditions a), aa) and aaa) compare integrals of the ε-coefficients with
//! integrals built from the limit data `(g, σ, f)`. Weak convergence is
//! measured on terminal marginals: KS and W₁ distances between samples of
//! `v_ε(T)` and of the limit process `v(T)`, simulated as a skew diffusion with
//! parameter `α`.

mod distance;
mod lemmas;

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::piecewise::PiecewiseC2;
use crate::quadrature;
use crate::simulate::{self, NoiseBlock, Record, TimeGrid};
use crate::transforms::{alpha_limit, CoefficientFamily, SkewParam};
use crate::{Error, Result};

pub use distance::{ks_distance, ks_threshold_99, wasserstein1};
pub use lemmas::{
    lemma3_constant, matched_bandwidth, verify_lemma1, verify_lemma1_with, verify_lemma3, LemmaDetails,
    LemmaResidualReport, ResidualStats, MC_Z,
};

/// Pass threshold for condition residuals at the smallest ε.
pub const CONDITION_TOL: f64 = 1e-2;
/// Allowed increase of a condition residual between consecutive ε (quadrature noise).
pub const MONOTONE_SLACK: f64 = 1e-9;
/// KS pass threshold as a multiple of the two-sample 99% quantile.
pub const KS_FACTOR: f64 = 3.0;

/// One entry of a condition table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionRow {
    pub eps: f64,
    pub x: f64,
    pub residual: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// `|α - (f₁ - f₂)/(f₁ + f₂)|` with `f₁, f₂` the left and right slopes of `f` at 0.
pub fn check_condition_a(f: &PiecewiseC2, alpha: f64) -> f64 {
    (alpha - alpha_limit(f.slope_left(), f.slope_right())).abs()
}

/// Quadrature of an integrand that may fail; the first failure is returned.
fn integrate_fallible<F>(f: F, a: f64, b: f64, bps: &[f64]) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let failure = RefCell::new(None);
    let v = quadrature::integrate(
        |y| match f(y) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        a,
        b,
        bps,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => v,
    }
}

fn with_zero(mut pts: Vec<f64>) -> Vec<f64> {
    pts.push(0.0);
    pts
}

fn condition_table<L, R>(
    eps_ladder: &[f64],
    x_grid: &[f64],
    fam: &CoefficientFamily,
    lhs: L,
    rhs: R,
) -> Result<Vec<ConditionRow>>
where
    L: Fn(f64, f64, &[f64]) -> Result<f64>,
    R: Fn(f64, &[f64]) -> Result<f64>,
{
    let limit_bps = fam.limit_breakpoints();
    let rhs_values: Vec<f64> = x_grid.iter().map(|&x| rhs(x, &limit_bps)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(eps_ladder.len() * x_grid.len());
    for &eps in eps_ladder {
        let bps = with_zero(fam.breakpoints(eps));
        for (&x, &r) in x_grid.iter().zip(&rhs_values) {
            let l = lhs(eps, x, &bps)?;
            rows.push(ConditionRow {
                eps,
                x,
                residual: (l - r).abs(),
                lhs: l,
                rhs: r,
            });
        }
    }
    Ok(rows)
}

/// Condition aa): `∫₀ˣ dy/(F_ε(y)σ_ε²(y))` against `∫₀ˣ dy/(σ²(y)·𝔻f(y))`.
pub fn check_condition_aa(fam: &CoefficientFamily, eps_ladder: &[f64], x_grid: &[f64]) -> Result<Vec<ConditionRow>> {
    condition_table(
        eps_ladder,
        x_grid,
        fam,
        |eps, x, bps| {
            let map = fam.scale(eps)?;
            let sigma = fam.sigma_eps.at(eps);
            integrate_fallible(
                |y| {
                    let s = sigma.value(y);
                    Ok(1.0 / (map.density(y)? * s * s))
                },
                0.0,
                x,
                bps,
            )
        },
        |x, bps| {
            let f = &fam.limit_f;
            quadrature::integrate(
                |y| {
                    let s = fam.limit_sigma.value(y);
                    1.0 / (s * s * f.sym_deriv(y))
                },
                0.0,
                x,
                bps,
            )
        },
    )
}

/// Condition aaa): `∫₀ˣ g_ε/σ_ε²` against `∫₀ˣ [g/σ² + ½·A_f/𝔻f]`.
pub fn check_condition_aaa(fam: &CoefficientFamily, eps_ladder: &[f64], x_grid: &[f64]) -> Result<Vec<ConditionRow>> {
    condition_table(
        eps_ladder,
        x_grid,
        fam,
        |eps, x, bps| {
            let (g, sigma) = (fam.g_eps.at(eps), fam.sigma_eps.at(eps));
            quadrature::integrate(
                |y| {
                    let s = sigma.value(y);
                    g.value(y) / (s * s)
                },
                0.0,
                x,
                bps,
            )
        },
        |x, bps| {
            let f = &fam.limit_f;
            quadrature::integrate(
                |y| {
                    let s = fam.limit_sigma.value(y);
                    fam.limit_g.value(y) / (s * s) + 0.5 * f.curvature_density(y) / f.sym_deriv(y)
                },
                0.0,
                x,
                bps,
            )
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub pass: bool,
    pub tolerance: f64,
    /// Largest residual at the smallest ε.
    pub max_at_smallest_eps: f64,
    /// Residuals never grow by more than the slack as ε decreases.
    pub nonincreasing: bool,
}

/// Applies the verdict rule to a condition table.
pub fn judge_condition(rows: &[ConditionRow], tolerance: f64) -> ConditionVerdict {
    let mut eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    let smallest = eps.last().copied().unwrap_or(f64::NAN);
    let max_at_smallest = rows
        .iter()
        .filter(|r| r.eps == smallest)
        .map(|r| r.residual)
        .fold(0.0, f64::max);
    let mut xs: Vec<f64> = rows.iter().map(|r| r.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let nonincreasing = xs.iter().all(|&x| {
        let seq: Vec<f64> = eps
            .iter()
            .filter_map(|&e| rows.iter().find(|r| r.eps == e && r.x == x))
            .map(|r| r.residual)
            .collect();
        seq.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK)
    });
    ConditionVerdict {
        pass: max_at_smallest < tolerance && nonincreasing,
        tolerance,
        max_at_smallest_eps: max_at_smallest,
        nonincreasing,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// The `α` checked (the limit's own, unless overridden).
    pub alpha: f64,
    pub alpha_residual: f64,
    pub aa: Vec<ConditionRow>,
    pub aaa: Vec<ConditionRow>,
    pub verdict_a: ConditionVerdict,
    pub verdict_aa: ConditionVerdict,
    pub verdict_aaa: ConditionVerdict,
}

impl ConditionReport {
    pub fn pass(&self) -> bool {
        self.verdict_a.pass && self.verdict_aa.pass && self.verdict_aaa.pass
    }
}

pub fn condition_report(
    fam: &CoefficientFamily,
    alpha: f64,
    eps_ladder: &[f64],
    x_grid: &[f64],
    tolerance: f64,
) -> Result<ConditionReport> {
    let alpha_residual = check_condition_a(&fam.limit_f, alpha);
    let aa = check_condition_aa(fam, eps_ladder, x_grid)?;
    let aaa = check_condition_aaa(fam, eps_ladder, x_grid)?;
    Ok(ConditionReport {
        alpha,
        alpha_residual,
        verdict_a: ConditionVerdict {
            pass: alpha_residual < tolerance,
            tolerance,
            max_at_smallest_eps: alpha_residual,
            nonincreasing: true,
        },
        verdict_aa: judge_condition(&aa, tolerance),
        verdict_aaa: judge_condition(&aaa, tolerance),
        aa,
        aaa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakDistanceRow {
    pub eps: f64,
    pub ks: f64,
    pub w1: f64,
    pub n_paths: usize,
    pub n_paths_limit: usize,
    /// Two-sample KS 99% quantile at these sample sizes.
    pub ks_halfwidth: f64,
    /// `2.576·√(var_ε/n + var/m)`: the 99% normal half-width of a mean
    /// difference, used as the noise scale of W₁.
    pub w1_halfwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceVerdict {
    pub pass: bool,
    /// KS never grows by more than its 99% half-width as ε decreases.
    pub nonincreasing: bool,
    pub final_ks: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakDistanceReport {
    pub alpha: f64,
    pub rows: Vec<WeakDistanceRow>,
    pub verdict: DistanceVerdict,
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Distances of each `(ε, sample)` to the limit sample, and the verdict.
pub fn weak_distance_report(alpha: f64, eps_samples: &[(f64, Vec<f64>)], limit: &[f64]) -> Result<WeakDistanceReport> {
    let var_limit = variance(limit);
    let mut rows = Vec::with_capacity(eps_samples.len());
    for (eps, sample) in eps_samples {
        rows.push(WeakDistanceRow {
            eps: *eps,
            ks: ks_distance(sample, limit)?,
            w1: wasserstein1(sample, limit)?,
            n_paths: sample.len(),
            n_paths_limit: limit.len(),
            ks_halfwidth: ks_threshold_99(sample.len(), limit.len()),
            w1_halfwidth: 2.576 * (variance(sample) / sample.len() as f64 + var_limit / limit.len() as f64).sqrt(),
        });
    }
    let mut ordered: Vec<&WeakDistanceRow> = rows.iter().collect();
    ordered.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let nonincreasing = ordered.windows(2).all(|w| w[1].ks <= w[0].ks + w[1].ks_halfwidth);
    let last = ordered
        .last()
        .ok_or_else(|| Error::InvalidInput("empty eps ladder".into()))?;
    let threshold = KS_FACTOR * last.ks_halfwidth;
    Ok(WeakDistanceReport {
        alpha,
        verdict: DistanceVerdict {
            pass: nonincreasing && last.ks <= threshold,
            nonincreasing,
            final_ks: last.ks,
            threshold,
        },
        rows,
    })
}

/// Everything a study needs besides the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub eps_ladder: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub x0: f64,
    pub horizon: f64,
    /// Minimum number of steps for every ε (the step rule may demand more).
    pub n_steps: usize,
    /// Steps of the limit simulation; `n_steps` when absent. The limit is
    /// simulated through a scheme whose error at the interface is of order
    /// `√dt`, so it usually wants a finer grid than the ε-equations.
    #[serde(default)]
    pub limit_n_steps: Option<usize>,
    pub n_paths: usize,
    pub master_seed: u64,
    /// Replaces the limit `α` in condition a) and in the limit simulation.
    #[serde(default)]
    pub alpha_override: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub condition_tol: f64,
}

fn default_tolerance() -> f64 {
    CONDITION_TOL
}

/// Seed of the limit sample, independent of the ε samples.
pub fn limit_seed(master_seed: u64) -> u64 {
    master_seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Grid for the ε-equation: at least `n_steps`, and `dt ≤ ε²/10`.
pub fn eps_grid(horizon: f64, n_steps: usize, eps: f64) -> Result<TimeGrid> {
    let fine = TimeGrid::with_max_step(horizon, simulate::max_eps_step(eps))?;
    TimeGrid::new(horizon, n_steps.max(fine.n_steps()))
}

/// Terminal values `v_ε(T)`.
pub fn eps_terminal_sample(
    fam: &CoefficientFamily,
    eps: f64,
    x0: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = eps_grid(horizon, n_steps, eps)?;
    let noise = NoiseBlock::new(seed, grid, n_paths)?;
    simulate::simulate_eps_recorded(fam, eps, x0, &noise, &Record::Terminal)?.terminal()
}

/// Terminal values of the limit `dv = α dL^v(t,0) + g(v)dt + σ(v)dw`.
pub fn limit_terminal_sample(
    fam: &CoefficientFamily,
    alpha: f64,
    x0: f64,
    horizon: f64,
    n_steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(horizon, n_steps)?;
    let noise = NoiseBlock::new(seed, grid, n_paths)?;
    let beta = SkewParam::new(alpha)?;
    simulate::simulate_skew_recorded(beta, &fam.limit_g, &fam.limit_sigma, x0, &noise, &Record::Terminal)?.terminal()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub conditions: ConditionReport,
    pub distances: WeakDistanceReport,
}

impl StudyReport {
    pub fn pass(&self) -> bool {
        self.conditions.pass() && self.distances.verdict.pass
    }
}

/// Condition checks plus terminal-marginal distances along the ε-ladder.
///
/// Every ε uses the same master seed, so the ε-samples share their Brownian
/// draws; the limit sample uses an independent seed.
pub fn convergence_study(fam: &CoefficientFamily, spec: &StudySpec) -> Result<StudyReport> {
    if spec.eps_ladder.is_empty() {
        return Err(Error::InvalidInput("eps ladder is empty".into()));
    }
    let f = &fam.limit_f;
    let alpha = spec
        .alpha_override
        .unwrap_or_else(|| alpha_limit(f.slope_left(), f.slope_right()));
    let conditions = condition_report(fam, alpha, &spec.eps_ladder, &spec.x_grid, spec.condition_tol)?;
    let mut samples = Vec::with_capacity(spec.eps_ladder.len());
    for &eps in &spec.eps_ladder {
        let s = eps_terminal_sample(
            fam,
            eps,
            spec.x0,
            spec.horizon,
            spec.n_steps,
            spec.n_paths,
            spec.master_seed,
        )?;
        samples.push((eps, s));
    }
    let limit = limit_terminal_sample(
        fam,
        alpha,
        spec.x0,
        spec.horizon,
        spec.limit_n_steps.unwrap_or(spec.n_steps),
        spec.n_paths,
        limit_seed(spec.master_seed),
    )?;
    let distances = weak_distance_report(alpha, &samples, &limit)?;
    Ok(StudyReport { conditions, distances })
}
