//! Path generation.
//!
//! Brownian increments come from a [`NoiseBlock`]: every path owns its own
//! ChaCha8 stream selected by `(master_seed, path_index)`, so ensembles are
//! reproducible bit-for-bit and paths can be integrated in any order or in
//! parallel. Increments are produced on the fly; nothing proportional to
//! `n_paths × n_steps` is held unless an ensemble records every step.
//!
//! Equations with a local-time term are never discretised directly. They are
//! simulated as ordinary Itô equations for `ζ` with tilde coefficients and
//! mapped back through `κ`.

mod local_time;

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::transforms::{tilde_coeff, CoefficientFamily, ScalarCoefficient, SkewParam};
use crate::{Error, Result};

pub use local_time::{
    bandwidth_floor, check_bandwidth, default_bandwidth, estimate_local_time, LocalTimeEstimate, LocalTimeObserver,
};

/// Uniform grid `t_k = k·T/n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput("n_steps must be at least 1".into()));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    /// Grid with step at most `max_dt`.
    pub fn with_max_step(horizon: f64, max_dt: f64) -> Result<Self> {
        let n = (horizon / max_dt).ceil();
        if !(n.is_finite() && n >= 1.0) {
            return Err(Error::InvalidInput(format!("cannot resolve step {max_dt}")));
        }
        Self::new(horizon, n as usize)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }
}

/// Seeded Gaussian increments `Δw ~ N(0, dt)` for `n_paths` independent paths.
///
/// Each increment is the scaled sum of `substeps` standard normal draws, which
/// lets a coarse block reuse the exact draws of a finer one (see [`coarsen`](Self::coarsen)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBlock {
    master_seed: u64,
    n_paths: usize,
    grid: TimeGrid,
    substeps: usize,
}

pub fn gen_noise(master_seed: u64, grid: TimeGrid, n_paths: usize) -> Result<NoiseBlock> {
    NoiseBlock::new(master_seed, grid, n_paths)
}

impl NoiseBlock {
    pub fn new(master_seed: u64, grid: TimeGrid, n_paths: usize) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::InvalidInput("n_paths must be at least 1".into()));
        }
        Ok(NoiseBlock {
            master_seed,
            n_paths,
            grid,
            substeps: 1,
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// The same Brownian draws aggregated `factor` steps at a time.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseBlock> {
        if factor == 0 || !self.grid.n_steps.is_multiple_of(factor) {
            return Err(Error::InvalidInput(format!(
                "coarsening factor {factor} must divide n_steps = {}",
                self.grid.n_steps
            )));
        }
        Ok(NoiseBlock {
            grid: TimeGrid::new(self.grid.horizon, self.grid.n_steps / factor)?,
            substeps: self.substeps * factor,
            ..*self
        })
    }

    /// Increment stream of one path.
    pub fn stream(&self, path: usize) -> PathNoise {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path as u64);
        PathNoise {
            rng,
            remaining: self.grid.n_steps,
            substeps: self.substeps,
            scale: (self.grid.dt() / self.substeps as f64).sqrt(),
        }
    }

    pub fn increments(&self, path: usize) -> Vec<f64> {
        self.stream(path).collect()
    }
}

/// Iterator over the increments of a single path.
pub struct PathNoise {
    rng: ChaCha8Rng,
    remaining: usize,
    substeps: usize,
    scale: f64,
}

impl Iterator for PathNoise {
    type Item = f64;

    #[inline]
    fn next(&mut self) -> Option<f64> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let mut z = 0.0;
        for _ in 0..self.substeps {
            let d: f64 = StandardNormal.sample(&mut self.rng);
            z += d;
        }
        Some(self.scale * z)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

/// Receives the state of one path at every grid step `0..=n_steps`.
pub trait PathObserver {
    type Output: Send;
    fn observe(&mut self, step: usize, x: f64);
    fn finish(self) -> Self::Output;
}

/// Which grid steps an ensemble keeps. Step 0 is always kept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Record {
    All,
    /// Every `k`-th step, plus the terminal step.
    Every(usize),
    Terminal,
    Steps(Vec<usize>),
}

impl Record {
    pub fn steps(&self, n_steps: usize) -> Vec<usize> {
        let mut s: Vec<usize> = match self {
            Record::All => (0..=n_steps).collect(),
            Record::Every(k) => {
                let k = (*k).max(1);
                let mut v: Vec<usize> = (0..=n_steps).step_by(k).collect();
                v.push(n_steps);
                v
            }
            Record::Terminal => vec![0, n_steps],
            Record::Steps(v) => {
                let mut v: Vec<usize> = v.iter().copied().filter(|&k| k <= n_steps).collect();
                v.push(0);
                v
            }
        };
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Stores the states at a fixed, sorted list of steps.
pub struct Recorder<'a> {
    steps: &'a [usize],
    next: usize,
    values: Vec<f64>,
}

impl<'a> Recorder<'a> {
    pub fn new(steps: &'a [usize]) -> Self {
        Recorder {
            steps,
            next: 0,
            values: Vec::with_capacity(steps.len()),
        }
    }
}

impl PathObserver for Recorder<'_> {
    type Output = Vec<f64>;

    #[inline]
    fn observe(&mut self, step: usize, x: f64) {
        if self.steps.get(self.next) == Some(&step) {
            self.values.push(x);
            self.next += 1;
        }
    }

    fn finish(self) -> Vec<f64> {
        self.values
    }
}

/// Applies a state map before handing states to the wrapped observer.
pub struct Mapped<F, O> {
    pub map: F,
    pub inner: O,
}

impl<F: Fn(f64) -> f64, O: PathObserver> PathObserver for Mapped<F, O> {
    type Output = O::Output;

    #[inline]
    fn observe(&mut self, step: usize, x: f64) {
        self.inner.observe(step, (self.map)(x));
    }

    fn finish(self) -> O::Output {
        self.inner.finish()
    }
}

impl<A: PathObserver, B: PathObserver> PathObserver for (A, B) {
    type Output = (A::Output, B::Output);

    #[inline]
    fn observe(&mut self, step: usize, x: f64) {
        self.0.observe(step, x);
        self.1.observe(step, x);
    }

    fn finish(self) -> Self::Output {
        (self.0.finish(), self.1.finish())
    }
}

/// Samples of one process on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    /// Recorded grid steps, sorted, starting at 0.
    pub steps: Vec<usize>,
    /// `values[path][i]` is the state at `steps[i]`.
    pub values: Vec<Vec<f64>>,
    /// The noise that drove the ensemble.
    pub noise: NoiseBlock,
    pub label: String,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.values.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&k| self.grid.time(k)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.steps.len() == self.grid.n_steps + 1
    }

    /// Values at the terminal time `T`; requires the last step to be recorded.
    pub fn terminal(&self) -> Result<Vec<f64>> {
        if self.steps.last() != Some(&self.grid.n_steps) {
            return Err(Error::InvalidInput("terminal step was not recorded".into()));
        }
        Ok(self.values.iter().map(|p| *p.last().expect("non-empty path")).collect())
    }

    /// Values at recorded step `k`.
    pub fn at_step(&self, k: usize) -> Result<Vec<f64>> {
        let i = self
            .steps
            .binary_search(&k)
            .map_err(|_| Error::InvalidInput(format!("step {k} was not recorded")))?;
        Ok(self.values.iter().map(|p| p[i]).collect())
    }

    /// CSV with header `t,path_0,path_1,…`, one row per recorded time, values in
    /// shortest round-trip decimal.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let times = self.times();
        let columns = self.values.iter().map(|p| p.as_slice());
        write_columns_csv(&mut w, &times, columns)
    }
}

pub(crate) fn write_columns_csv<'a, W: Write>(
    w: &mut W,
    times: &[f64],
    columns: impl Iterator<Item = &'a [f64]> + Clone,
) -> io::Result<()> {
    write!(w, "t")?;
    for (i, _) in columns.clone().enumerate() {
        write!(w, ",path_{i}")?;
    }
    writeln!(w)?;
    for (row, t) in times.iter().enumerate() {
        write!(w, "{t}")?;
        for col in columns.clone() {
            write!(w, ",{}", col[row])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Integrates one path of `dx = drift(x)dt + diffusion(x)dw` and feeds every
/// state to `obs`.
#[inline]
fn drive_path<D, S, O>(drift: &D, diffusion: &S, x0: f64, noise: &NoiseBlock, path: usize, obs: &mut O) -> Result<()>
where
    D: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
    O: PathObserver,
{
    let dt = noise.grid.dt();
    let mut x = x0;
    obs.observe(0, x);
    for (k, dw) in noise.stream(path).enumerate() {
        x = x + drift(x) * dt + diffusion(x) * dw;
        if !x.is_finite() {
            return Err(Error::NonFiniteState { path, step: k + 1 });
        }
        obs.observe(k + 1, x);
    }
    Ok(())
}

/// Runs Euler–Maruyama for every path of `noise`, building one observer per
/// path with `make`. Results are returned in path order.
pub fn simulate_observed<O, M>(
    drift: &ScalarCoefficient,
    diffusion: &ScalarCoefficient,
    x0: f64,
    noise: &NoiseBlock,
    make: M,
) -> Result<Vec<O::Output>>
where
    O: PathObserver,
    M: Fn(usize) -> O + Sync,
{
    drift.require_state()?;
    diffusion.require_state()?;
    if !x0.is_finite() {
        return Err(Error::InvalidInput(format!("initial state must be finite, got {x0}")));
    }
    let b = |x: f64| drift.value(x);
    let s = |x: f64| diffusion.value(x);
    (0..noise.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut obs = make(p);
            drive_path(&b, &s, x0, noise, p, &mut obs)?;
            Ok(obs.finish())
        })
        .collect()
}

fn check_grid(grid: &TimeGrid, noise: &NoiseBlock) -> Result<()> {
    if *grid != noise.grid {
        return Err(Error::InvalidInput(format!(
            "time grid {grid:?} does not match the noise grid {:?}",
            noise.grid
        )));
    }
    Ok(())
}

/// Euler–Maruyama ensemble recording every grid step.
pub fn euler_maruyama(
    drift: &ScalarCoefficient,
    diffusion: &ScalarCoefficient,
    x0: f64,
    grid: &TimeGrid,
    noise: &NoiseBlock,
) -> Result<PathEnsemble> {
    check_grid(grid, noise)?;
    euler_maruyama_recorded(drift, diffusion, x0, noise, &Record::All)
}

/// Euler–Maruyama ensemble keeping only the steps selected by `record`.
pub fn euler_maruyama_recorded(
    drift: &ScalarCoefficient,
    diffusion: &ScalarCoefficient,
    x0: f64,
    noise: &NoiseBlock,
    record: &Record,
) -> Result<PathEnsemble> {
    let steps = record.steps(noise.grid.n_steps);
    let values = simulate_observed(drift, diffusion, x0, noise, |_| Recorder::new(&steps))?;
    Ok(PathEnsemble {
        grid: noise.grid,
        steps,
        values,
        noise: *noise,
        label: format!("euler({}, {})", drift.label(), diffusion.label()),
    })
}

/// Simulates `ζ` with coefficients `(g̃, σ̃)` from `φ(x0)` and hands
/// `κ(ζ)` to the observers: a sampled weak solution of
/// `dξ = β dL^ξ(t,0) + g(ξ)dt + σ(ξ)dw`.
pub fn simulate_skew_observed<O, M>(
    beta: SkewParam,
    g: &ScalarCoefficient,
    sigma: &ScalarCoefficient,
    x0: f64,
    noise: &NoiseBlock,
    make: M,
) -> Result<Vec<O::Output>>
where
    O: PathObserver,
    M: Fn(usize) -> O + Sync,
{
    let g_t = tilde_coeff(g, beta);
    let s_t = tilde_coeff(sigma, beta);
    simulate_observed(&g_t, &s_t, beta.phi(x0), noise, |p| Mapped {
        map: move |z| beta.kappa(z),
        inner: make(p),
    })
}

pub fn simulate_skew_sde(
    beta: SkewParam,
    g: &ScalarCoefficient,
    sigma: &ScalarCoefficient,
    x0: f64,
    grid: &TimeGrid,
    noise: &NoiseBlock,
) -> Result<PathEnsemble> {
    check_grid(grid, noise)?;
    simulate_skew_recorded(beta, g, sigma, x0, noise, &Record::All)
}

pub fn simulate_skew_recorded(
    beta: SkewParam,
    g: &ScalarCoefficient,
    sigma: &ScalarCoefficient,
    x0: f64,
    noise: &NoiseBlock,
    record: &Record,
) -> Result<PathEnsemble> {
    let steps = record.steps(noise.grid.n_steps);
    let values = simulate_skew_observed(beta, g, sigma, x0, noise, |_| Recorder::new(&steps))?;
    Ok(PathEnsemble {
        grid: noise.grid,
        steps,
        values,
        noise: *noise,
        label: format!("skew(beta={}, {}, {})", beta.value(), g.label(), sigma.label()),
    })
}

/// Largest step allowed for the ε-family: `dt ≤ ε²/10`.
pub fn max_eps_step(eps: f64) -> f64 {
    eps * eps / 10.0
}

/// Drift `b_ε + g_ε` and diffusion `σ_ε` of the ε-family, bound at `eps`.
pub fn eps_coefficients(fam: &CoefficientFamily, eps: f64) -> Result<(ScalarCoefficient, ScalarCoefficient)> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let b = fam.b_eps.at(eps);
    let g = fam.g_eps.at(eps);
    let drift = ScalarCoefficient::state(format!("{} + {}", b.label(), g.label()), move |x| {
        b.value(x) + g.value(x)
    });
    Ok((drift, fam.sigma_eps.at(eps)))
}

fn check_eps_step(noise: &NoiseBlock, eps: f64) -> Result<()> {
    let max_dt = max_eps_step(eps);
    let dt = noise.grid.dt();
    if dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::StepTooCoarse { dt, max_dt, eps });
    }
    Ok(())
}

pub fn simulate_eps_observed<O, M>(
    fam: &CoefficientFamily,
    eps: f64,
    x0: f64,
    noise: &NoiseBlock,
    make: M,
) -> Result<Vec<O::Output>>
where
    O: PathObserver,
    M: Fn(usize) -> O + Sync,
{
    let (drift, diffusion) = eps_coefficients(fam, eps)?;
    check_eps_step(noise, eps)?;
    simulate_observed(&drift, &diffusion, x0, noise, make)
}

/// The ε-equation `dv = (b_ε + g_ε)(v)dt + σ_ε(v)dw`, every step recorded.
pub fn simulate_eps_family(
    fam: &CoefficientFamily,
    eps: f64,
    x0: f64,
    grid: &TimeGrid,
    noise: &NoiseBlock,
) -> Result<PathEnsemble> {
    check_grid(grid, noise)?;
    simulate_eps_recorded(fam, eps, x0, noise, &Record::All)
}

pub fn simulate_eps_recorded(
    fam: &CoefficientFamily,
    eps: f64,
    x0: f64,
    noise: &NoiseBlock,
    record: &Record,
) -> Result<PathEnsemble> {
    let steps = record.steps(noise.grid.n_steps);
    let values = simulate_eps_observed(fam, eps, x0, noise, |_| Recorder::new(&steps))?;
    Ok(PathEnsemble {
        grid: noise.grid,
        steps,
        values,
        noise: *noise,
        label: format!("v_eps(eps={eps})"),
    })
}

/// Applies `map` to every recorded state; the driving noise is kept.
pub fn transform_ensemble<F>(paths: &PathEnsemble, map: F, label: &str) -> Result<PathEnsemble>
where
    F: Fn(f64) -> f64 + Sync,
{
    let values = paths
        .values
        .par_iter()
        .enumerate()
        .map(|(p, path)| {
            path.iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = map(x);
                    if y.is_finite() {
                        Ok(y)
                    } else {
                        Err(Error::NonFiniteState {
                            path: p,
                            step: paths.steps[i],
                        })
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        values,
        label: label.to_string(),
        ..paths.clone()
    })
}

#[cfg(test)]
mod tests;
