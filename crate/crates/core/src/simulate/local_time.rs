//! Occupation-time estimate of the symmetric local time at 0:
//! `L̂(t) = (1/2δ) Σ_{t_k < t} 1{|x_k| < δ} σ²(x_k) dt`.

use std::io::{self, Write};

use serde::Serialize;

use super::{write_columns_csv, PathEnsemble, PathObserver};
use crate::transforms::ScalarCoefficient;
use crate::{Error, Result};

const FLOOR_PROBES: usize = 201;

/// Default bandwidth `2√dt`.
pub fn default_bandwidth(dt: f64) -> f64 {
    2.0 * dt.sqrt()
}

/// `√dt · max_{|x|<δ} σ(x)`, with the maximum taken on a uniform probe grid.
pub fn bandwidth_floor(sigma: &ScalarCoefficient, delta: f64, dt: f64) -> Result<f64> {
    sigma.require_state()?;
    let mut m = 0.0_f64;
    for i in 0..FLOOR_PROBES {
        let x = -delta + 2.0 * delta * i as f64 / (FLOOR_PROBES - 1) as f64;
        m = m.max(sigma.value(x).abs());
    }
    Ok(dt.sqrt() * m)
}

/// Rejects `delta` below [`bandwidth_floor`].
pub fn check_bandwidth(sigma: &ScalarCoefficient, delta: f64, dt: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {delta}")));
    }
    let floor = bandwidth_floor(sigma, delta, dt)?;
    if delta < floor {
        return Err(Error::BandwidthTooSmall { delta, floor });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalTimeEstimate {
    pub delta: f64,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    /// `values[path][i]` is `L̂` at `times[i]`.
    pub values: Vec<Vec<f64>>,
}

impl LocalTimeEstimate {
    pub fn terminal(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|p| *p.last().expect("non-empty estimate"))
            .collect()
    }

    pub fn mean_terminal(&self) -> f64 {
        let t = self.terminal();
        t.iter().sum::<f64>() / t.len() as f64
    }

    /// Same layout as [`PathEnsemble::write_csv`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_columns_csv(&mut w, &self.times, self.values.iter().map(|p| p.as_slice()))
    }
}

/// Streaming estimator for one path; reports `L̂` at the given sorted steps.
pub struct LocalTimeObserver<'a> {
    sigma: &'a ScalarCoefficient,
    delta: f64,
    weight: f64,
    report: &'a [usize],
    next: usize,
    acc: f64,
    out: Vec<f64>,
}

impl<'a> LocalTimeObserver<'a> {
    /// Callers are expected to have checked the bandwidth floor.
    pub fn new(sigma: &'a ScalarCoefficient, delta: f64, dt: f64, report: &'a [usize]) -> Self {
        LocalTimeObserver {
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

impl PathObserver for LocalTimeObserver<'_> {
    type Output = Vec<f64>;

    #[inline]
    fn observe(&mut self, step: usize, x: f64) {
        // only states strictly before t_k contribute to L̂(t_k)
        if self.report.get(self.next) == Some(&step) {
            self.out.push(self.acc);
            self.next += 1;
        }
        if x.abs() < self.delta {
            let s = self.sigma.value(x);
            self.acc += s * s * self.weight;
        }
    }

    fn finish(self) -> Vec<f64> {
        self.out
    }
}

/// Local time at 0 of every path of a fully recorded ensemble, at every grid time.
pub fn estimate_local_time(paths: &PathEnsemble, sigma: &ScalarCoefficient, delta: f64) -> Result<LocalTimeEstimate> {
    if !paths.is_complete() {
        return Err(Error::IncompleteRecording);
    }
    let dt = paths.grid.dt();
    check_bandwidth(sigma, delta, dt)?;
    let steps = paths.steps.clone();
    let values = paths
        .values
        .iter()
        .map(|path| {
            let mut obs = LocalTimeObserver::new(sigma, delta, dt, &steps);
            for (k, &x) in path.iter().enumerate() {
                obs.observe(k, x);
            }
            obs.finish()
        })
        .collect();
    Ok(LocalTimeEstimate {
        delta,
        times: paths.times(),
        steps,
        values,
    })
}
