//! Command-line driver: reads a JSON config, runs simulations and studies,
//! writes CSV and JSON outputs.
//!
//! Exit codes: 0 on success or a passing verdict, 2 on a failing verdict,
//! 1 on any error.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod expr;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use skewlab_core::convergence::{
    self, ConditionRow, ConditionVerdict, DistanceVerdict, LemmaResidualReport, StudySpec, WeakDistanceRow,
};
use skewlab_core::piecewise::PiecewiseC2;
use skewlab_core::simulate::{self, LocalTimeEstimate, LocalTimeObserver, NoiseBlock, PathEnsemble, Record, TimeGrid};
use skewlab_core::transforms::{alpha_limit, ScalarCoefficient, SkewParam};

use config::{ConfigError, Process, StudyConfig};

#[derive(Debug, Parser)]
#[command(
    name = "skewlab",
    version,
    about = "Simulate skew diffusions and their approximating families"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Directory for output files (created if missing).
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overrides `run.eps` for single-eps runs.
    #[arg(long, value_name = "X")]
    eps: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one process and write the path ensemble as CSV.
    Simulate(Common),
    /// Estimate the local time at 0 and write it as CSV.
    LocalTime(Common),
    /// Check conditions a), aa), aaa) and write a JSON report.
    Check(Common),
    /// Conditions plus weak distances along the eps ladder.
    Study(Common),
    /// Monte Carlo check of a local-time identity.
    VerifyLemma {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_which)]
        which: u8,
    },
}

fn parse_which(s: &str) -> Result<u8, String> {
    match s {
        "1" => Ok(1),
        "3" => Ok(3),
        _ => Err(format!("expected 1 or 3, got `{s}`")),
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] skewlab_core::Error),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}")]
    Usage(String),
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(cmd: Command) -> CliResult<Outcome> {
    match cmd {
        Command::Simulate(c) => simulate_cmd(&c),
        Command::LocalTime(c) => local_time_cmd(&c),
        Command::Check(c) => check_cmd(&c),
        Command::Study(c) => study_cmd(&c),
        Command::VerifyLemma { common, which } => lemma_cmd(&common, which),
    }
}

/// Loads the config, applies command-line overrides and fills defaults.
fn load(c: &Common) -> CliResult<StudyConfig> {
    let mut cfg = StudyConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.master_seed = seed;
    }
    if let Some(eps) = c.eps {
        cfg.run.eps = Some(eps);
    }
    cfg.validate()?;
    cfg.resolve();
    if cfg.run.process != Process::Eps && cfg.run.eps.is_some() {
        return Err(CliError::Usage(
            "run.eps (or --eps) applies only to the eps process".into(),
        ));
    }
    Ok(cfg)
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn write_file<F>(dir: &Path, name: &str, body: F) -> CliResult<PathBuf>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    create_out(dir)?;
    let path = dir.join(name);
    let io_err = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(&path).map_err(io_err)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    write_file(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        writeln!(w)
    })
}

fn limit_f(cfg: &StudyConfig) -> CliResult<PiecewiseC2> {
    Ok(cfg.piecewise("limit_f", &cfg.limit_f)?)
}

fn implied_alpha(cfg: &StudyConfig) -> CliResult<f64> {
    let f = limit_f(cfg)?;
    Ok(cfg
        .alpha
        .unwrap_or_else(|| alpha_limit(f.slope_left(), f.slope_right())))
}

/// The process selected by `run`, ready to simulate.
enum Prepared {
    Eps {
        fam: Box<skewlab_core::transforms::CoefficientFamily>,
        eps: f64,
    },
    Skew {
        beta: SkewParam,
        g: ScalarCoefficient,
        sigma: ScalarCoefficient,
    },
}

impl Prepared {
    fn new(cfg: &StudyConfig) -> CliResult<Self> {
        let skew = |beta: f64| -> CliResult<Prepared> {
            let c = &cfg.coefficients;
            Ok(Prepared::Skew {
                beta: SkewParam::new(beta)?,
                g: cfg.state_coefficient("coefficients.g", &c.g)?,
                sigma: cfg.state_coefficient("coefficients.sigma", &c.sigma)?,
            })
        };
        match cfg.run.process {
            Process::Eps => {
                let eps = cfg.run.eps.expect("resolved config has run.eps");
                Ok(Prepared::Eps {
                    fam: Box::new(cfg.family(&[eps])?),
                    eps,
                })
            }
            Process::Skew => {
                let beta = cfg
                    .beta
                    .ok_or_else(|| CliError::Usage("beta: required for the skew process".into()))?;
                skew(beta)
            }
            Process::Limit => skew(implied_alpha(cfg)?),
        }
    }

    fn grid(&self, cfg: &StudyConfig) -> CliResult<TimeGrid> {
        Ok(match self {
            Prepared::Eps { eps, .. } => convergence::eps_grid(cfg.horizon, cfg.n_steps, *eps)?,
            Prepared::Skew { .. } => TimeGrid::new(cfg.horizon, cfg.n_steps)?,
        })
    }

    /// The diffusion coefficient of the simulated process.
    fn sigma(&self) -> ScalarCoefficient {
        match self {
            Prepared::Eps { fam, eps } => fam.sigma_eps.at(*eps),
            Prepared::Skew { sigma, .. } => sigma.clone(),
        }
    }
}

fn run_noise(cfg: &StudyConfig, grid: TimeGrid) -> CliResult<NoiseBlock> {
    let n = cfg.run.n_paths.expect("resolved config has run.n_paths");
    Ok(NoiseBlock::new(cfg.master_seed, grid, n)?)
}

fn record(cfg: &StudyConfig) -> Record {
    Record::Every(cfg.run.record_every.expect("resolved config has run.record_every"))
}

fn simulate_cmd(c: &Common) -> CliResult<Outcome> {
    let cfg = load(c)?;
    let prep = Prepared::new(&cfg)?;
    let noise = run_noise(&cfg, prep.grid(&cfg)?)?;
    let rec = record(&cfg);
    let ens: PathEnsemble = match &prep {
        Prepared::Eps { fam, eps } => simulate::simulate_eps_recorded(fam, *eps, cfg.x0, &noise, &rec)?,
        Prepared::Skew { beta, g, sigma } => simulate::simulate_skew_recorded(*beta, g, sigma, cfg.x0, &noise, &rec)?,
    };
    let path = write_file(&c.out, &cfg.outputs.ensemble, |w| ens.write_csv(w))?;
    println!(
        "{}: {} paths, {} steps, dt = {}",
        ens.label,
        ens.n_paths(),
        noise.grid().n_steps(),
        noise.grid().dt()
    );
    println!("wrote {}", path.display());
    Ok(Outcome::Pass)
}

fn local_time_cmd(c: &Common) -> CliResult<Outcome> {
    let cfg = load(c)?;
    let prep = Prepared::new(&cfg)?;
    let grid = prep.grid(&cfg)?;
    let noise = run_noise(&cfg, grid)?;
    let dt = grid.dt();
    let delta = cfg.delta.delta(dt);
    let sigma = prep.sigma();
    simulate::check_bandwidth(&sigma, delta, dt)?;
    let steps = record(&cfg).steps(grid.n_steps());
    let make = |_| LocalTimeObserver::new(&sigma, delta, dt, &steps);
    let values = match &prep {
        Prepared::Eps { fam, eps } => simulate::simulate_eps_observed(fam, *eps, cfg.x0, &noise, make)?,
        Prepared::Skew { beta, g, sigma } => simulate::simulate_skew_observed(*beta, g, sigma, cfg.x0, &noise, make)?,
    };
    let est = LocalTimeEstimate {
        delta,
        times: steps.iter().map(|&k| grid.time(k)).collect(),
        steps: steps.clone(),
        values,
    };
    let path = write_file(&c.out, &cfg.outputs.local_time, |w| est.write_csv(w))?;
    println!("delta = {delta}, mean L(T, 0) = {}", est.mean_terminal());
    println!("wrote {}", path.display());
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct ConditionA {
    alpha: f64,
    f1: f64,
    f2: f64,
    residual: f64,
}

#[derive(Serialize)]
struct ConditionVerdicts<'a> {
    pass: bool,
    a: &'a ConditionVerdict,
    aa: &'a ConditionVerdict,
    aaa: &'a ConditionVerdict,
}

#[derive(Serialize)]
struct ConditionsFile<'a> {
    alpha: f64,
    condition_a: ConditionA,
    condition_aa: &'a [ConditionRow],
    condition_aaa: &'a [ConditionRow],
    verdict: ConditionVerdicts<'a>,
    master_seed: u64,
    config_echo: &'a StudyConfig,
}

#[derive(Serialize)]
struct DistancesFile<'a> {
    alpha: f64,
    weak_distances: &'a [WeakDistanceRow],
    verdict: &'a DistanceVerdict,
    master_seed: u64,
    config_echo: &'a StudyConfig,
}

fn write_conditions(
    c: &Common,
    cfg: &StudyConfig,
    f: &PiecewiseC2,
    report: &convergence::ConditionReport,
) -> CliResult<PathBuf> {
    let file = ConditionsFile {
        alpha: report.alpha,
        condition_a: ConditionA {
            alpha: report.alpha,
            f1: f.slope_left(),
            f2: f.slope_right(),
            residual: report.alpha_residual,
        },
        condition_aa: &report.aa,
        condition_aaa: &report.aaa,
        verdict: ConditionVerdicts {
            pass: report.pass(),
            a: &report.verdict_a,
            aa: &report.verdict_aa,
            aaa: &report.verdict_aaa,
        },
        master_seed: cfg.master_seed,
        config_echo: cfg,
    };
    write_json(&c.out, &cfg.outputs.conditions, &file)
}

fn verdict_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

fn print_conditions(report: &convergence::ConditionReport) {
    println!("alpha = {}", report.alpha);
    for (name, v) in [
        ("a", &report.verdict_a),
        ("aa", &report.verdict_aa),
        ("aaa", &report.verdict_aaa),
    ] {
        println!(
            "condition {name}: {} (residual {} at the smallest eps, tolerance {})",
            verdict_word(v.pass),
            v.max_at_smallest_eps,
            v.tolerance
        );
    }
}

fn check_cmd(c: &Common) -> CliResult<Outcome> {
    let cfg = load(c)?;
    let fam = cfg.family(&[])?;
    let alpha = implied_alpha(&cfg)?;
    let report = convergence::condition_report(&fam, alpha, &cfg.eps, &cfg.x_grid, cfg.condition_tol)?;
    let path = write_conditions(c, &cfg, &fam.limit_f, &report)?;
    print_conditions(&report);
    println!("wrote {}", path.display());
    Ok(Outcome::from_pass(report.pass()))
}

fn study_cmd(c: &Common) -> CliResult<Outcome> {
    let cfg = load(c)?;
    let fam = cfg.family(&[])?;
    let spec = StudySpec {
        eps_ladder: cfg.eps.clone(),
        x_grid: cfg.x_grid.clone(),
        x0: cfg.x0,
        horizon: cfg.horizon,
        n_steps: cfg.n_steps,
        limit_n_steps: cfg.limit_n_steps,
        n_paths: cfg.n_paths,
        master_seed: cfg.master_seed,
        alpha_override: cfg.alpha,
        condition_tol: cfg.condition_tol,
    };
    let report = convergence::convergence_study(&fam, &spec)?;
    let cond = write_conditions(c, &cfg, &fam.limit_f, &report.conditions)?;
    let d = &report.distances;
    let dist = write_json(
        &c.out,
        &cfg.outputs.distances,
        &DistancesFile {
            alpha: d.alpha,
            weak_distances: &d.rows,
            verdict: &d.verdict,
            master_seed: cfg.master_seed,
            config_echo: &cfg,
        },
    )?;
    print_conditions(&report.conditions);
    for row in &d.rows {
        println!("eps = {}: KS = {}, W1 = {}", row.eps, row.ks, row.w1);
    }
    println!(
        "distances: {} (final KS {}, threshold {}, nonincreasing {})",
        verdict_word(d.verdict.pass),
        d.verdict.final_ks,
        d.verdict.threshold,
        d.verdict.nonincreasing
    );
    println!("wrote {}", cond.display());
    println!("wrote {}", dist.display());
    Ok(Outcome::from_pass(report.pass()))
}

fn resolved<T>(v: Option<T>) -> T {
    v.expect("resolved config fills lemma settings")
}

#[derive(Serialize)]
struct LemmaFile<'a> {
    #[serde(flatten)]
    report: &'a LemmaResidualReport,
    relative_residual: f64,
    tolerance: Option<f64>,
    pass: bool,
    master_seed: u64,
    config_echo: &'a StudyConfig,
}

fn lemma_cmd(c: &Common, which: u8) -> CliResult<Outcome> {
    let cfg = load(c)?;
    let l = cfg
        .lemma
        .as_ref()
        .ok_or_else(|| CliError::Usage("lemma: section required for verify-lemma".into()))?;
    let u = cfg.piecewise("lemma.u", &l.u)?;
    let g = cfg.state_coefficient("lemma.g", &config::CoefficientSource::Bare(l.g.clone()))?;
    let sigma = cfg.state_coefficient("lemma.sigma", &config::CoefficientSource::Bare(l.sigma.clone()))?;
    let grid = TimeGrid::new(resolved(l.horizon), resolved(l.n_steps))?;
    let noise = NoiseBlock::new(cfg.master_seed, grid, resolved(l.n_paths))?;
    let delta = cfg.delta.delta(grid.dt());
    let x0 = resolved(l.x0);
    let (report, tolerance, pass) = if which == 1 {
        let r = convergence::verify_lemma1(&u, &g, &sigma, x0, &grid, &noise, delta)?;
        let pass = r.relative() <= l.tolerance;
        (r, Some(l.tolerance), pass)
    } else {
        let r = convergence::verify_lemma3(&u, SkewParam::new(l.beta)?, &g, &sigma, x0, &grid, &noise, delta)?;
        let pass = r.within_mc_error;
        (r, None, pass)
    };
    let name = if which == 1 {
        &cfg.outputs.lemma1
    } else {
        &cfg.outputs.lemma3
    };
    let path = write_json(
        &c.out,
        name,
        &LemmaFile {
            report: &report,
            relative_residual: report.relative(),
            tolerance,
            pass,
            master_seed: cfg.master_seed,
            config_echo: &cfg,
        },
    )?;
    println!(
        "lemma {which}: residual {} (relative {}), MC standard error {}: {}",
        report.residual,
        report.relative(),
        report.mc_stderr,
        verdict_word(pass)
    );
    println!("wrote {}", path.display());
    Ok(Outcome::from_pass(pass))
}
