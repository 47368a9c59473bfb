//! The JSON configuration file. The schema is documented in `docs/config.md`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use skewlab_core::piecewise::{PiecewiseC2, Side, SmoothBranch};
use skewlab_core::transforms::{ClassBounds, CoefficientFamily, FamilySpec, ScalarCoefficient};

use crate::expr::{self, Expr};

/// A coefficient: either a bare expression or an expression with breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSource {
    Bare(String),
    Full {
        expr: String,
        #[serde(default)]
        breakpoints: Vec<String>,
    },
}

impl CoefficientSource {
    fn parts(&self) -> (&str, &[String]) {
        match self {
            CoefficientSource::Bare(e) => (e, &[]),
            CoefficientSource::Full { expr, breakpoints } => (expr, breakpoints),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub b_eps: CoefficientSource,
    pub g_eps: CoefficientSource,
    pub sigma_eps: CoefficientSource,
    pub g: CoefficientSource,
    pub sigma: CoefficientSource,
}

/// A two-branch map given by its branch expressions in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchPair {
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lambda: 1e-2,
            big_lambda: 1e2,
        }
    }
}

/// How the local-time bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaRule {
    /// `2√dt`.
    #[default]
    Default,
    /// `factor·√dt`.
    SqrtDt {
        factor: f64,
    },
    Fixed {
        value: f64,
    },
}

impl DeltaRule {
    pub fn delta(&self, dt: f64) -> f64 {
        match *self {
            DeltaRule::Default => skewlab_core::simulate::default_bandwidth(dt),
            DeltaRule::SqrtDt { factor } => factor * dt.sqrt(),
            DeltaRule::Fixed { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    /// The ε-equation at one ε.
    #[default]
    Eps,
    /// The skew equation with the configured `beta` and the limit `g`, `sigma`.
    Skew,
    /// The limit equation: skew parameter `alpha`, or the one implied by `limit_f`.
    Limit,
}

/// What `simulate` and `local-time` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub process: Process,
    /// ε for the `eps` process; defaults to the smallest ε of the ladder.
    #[serde(default)]
    pub eps: Option<f64>,
    /// Overrides the top-level `n_paths`.
    #[serde(default)]
    pub n_paths: Option<usize>,
    /// Keep every k-th grid step in the CSV (the last step is always kept).
    #[serde(default)]
    pub record_every: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaConfig {
    pub u: BranchPair,
    #[serde(default = "zero_expr")]
    pub g: String,
    #[serde(default = "one_expr")]
    pub sigma: String,
    /// Skew parameter of `ξ` (lemma 3 only).
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub x0: Option<f64>,
    #[serde(default, rename = "T")]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    /// Largest accepted relative residual for lemma 1.
    #[serde(default = "default_lemma_tolerance")]
    pub tolerance: f64,
}

fn zero_expr() -> String {
    "0".into()
}

fn one_expr() -> String {
    "1".into()
}

fn default_lemma_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "Outputs::ensemble_default")]
    pub ensemble: String,
    #[serde(default = "Outputs::local_time_default")]
    pub local_time: String,
    #[serde(default = "Outputs::conditions_default")]
    pub conditions: String,
    #[serde(default = "Outputs::distances_default")]
    pub distances: String,
    #[serde(default = "Outputs::lemma1_default")]
    pub lemma1: String,
    #[serde(default = "Outputs::lemma3_default")]
    pub lemma3: String,
}

impl Outputs {
    fn ensemble_default() -> String {
        "ensemble.csv".into()
    }
    fn local_time_default() -> String {
        "local_time.csv".into()
    }
    fn conditions_default() -> String {
        "conditions.json".into()
    }
    fn distances_default() -> String {
        "distances.json".into()
    }
    fn lemma1_default() -> String {
        "lemma1.json".into()
    }
    fn lemma3_default() -> String {
        "lemma3.json".into()
    }
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            ensemble: Self::ensemble_default(),
            local_time: Self::local_time_default(),
            conditions: Self::conditions_default(),
            distances: Self::distances_default(),
            lemma1: Self::lemma1_default(),
            lemma3: Self::lemma3_default(),
        }
    }
}

fn default_x_grid() -> Vec<f64> {
    vec![-1.0, -0.5, 0.5, 1.0]
}

fn default_condition_tol() -> f64 {
    skewlab_core::convergence::CONDITION_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub coefficients: Coefficients,
    pub limit_f: BranchPair,
    #[serde(default)]
    pub bounds: Bounds,
    /// Skew parameter of the `skew` process.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Overrides the `α` implied by `limit_f`.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub x0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
    /// Steps of the limit simulation in `study`; `n_steps` when absent.
    #[serde(default)]
    pub limit_n_steps: Option<usize>,
    pub eps: Vec<f64>,
    #[serde(default = "default_x_grid")]
    pub x_grid: Vec<f64>,
    pub n_paths: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub delta: DeltaRule,
    #[serde(default = "default_condition_tol")]
    pub condition_tol: f64,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub lemma: Option<LemmaConfig>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Field { path: String, message: String },
}

fn field(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        path: path.into(),
        message: message.into(),
    }
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: StudyConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field(if path == "." { "config".into() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check_skew("beta", self.beta)?;
        check_skew("alpha", self.alpha)?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(field("T", format!("T > 0 required, got {}", self.horizon)));
        }
        if self.n_steps < 1 {
            return Err(field("n_steps", "n_steps >= 1 required"));
        }
        if self.limit_n_steps == Some(0) {
            return Err(field("limit_n_steps", "limit_n_steps >= 1 required"));
        }
        if self.n_paths < 1 {
            return Err(field("n_paths", "n_paths >= 1 required"));
        }
        if !self.x0.is_finite() {
            return Err(field("x0", "x0 must be finite"));
        }
        if self.eps.is_empty() {
            return Err(field("eps", "the eps ladder must be nonempty"));
        }
        for (i, &e) in self.eps.iter().enumerate() {
            if !(e > 0.0 && e.is_finite()) {
                return Err(field(format!("eps[{i}]"), format!("eps > 0 required, got {e}")));
            }
            if i > 0 && e >= self.eps[i - 1] {
                return Err(field(
                    format!("eps[{i}]"),
                    format!(
                        "the eps ladder must be strictly decreasing, {e} follows {}",
                        self.eps[i - 1]
                    ),
                ));
            }
        }
        if let Some((i, x)) = self.x_grid.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(field(format!("x_grid[{i}]"), format!("must be finite, got {x}")));
        }
        if !(self.condition_tol > 0.0) {
            return Err(field("condition_tol", "condition_tol > 0 required"));
        }
        match self.delta {
            DeltaRule::SqrtDt { factor } if !(factor > 0.0 && factor.is_finite()) => {
                return Err(field("delta.factor", format!("factor > 0 required, got {factor}")))
            }
            DeltaRule::Fixed { value } if !(value > 0.0 && value.is_finite()) => {
                return Err(field("delta.value", format!("value > 0 required, got {value}")))
            }
            _ => {}
        }
        if let Some(e) = self.run.eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(field("run.eps", format!("eps > 0 required, got {e}")));
            }
        }
        if self.run.n_paths == Some(0) {
            return Err(field("run.n_paths", "n_paths >= 1 required"));
        }
        if self.run.record_every == Some(0) {
            return Err(field("run.record_every", "record_every >= 1 required"));
        }
        if let Some(l) = &self.lemma {
            check_skew("lemma.beta", Some(l.beta))?;
            if let Some(t) = l.horizon {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(field("lemma.T", format!("T > 0 required, got {t}")));
                }
            }
            if l.n_steps == Some(0) {
                return Err(field("lemma.n_steps", "n_steps >= 1 required"));
            }
            if l.n_paths == Some(0) {
                return Err(field("lemma.n_paths", "n_paths >= 1 required"));
            }
        }
        Ok(())
    }

    /// Fills every optional run setting with the value actually used, so
    /// that the echoed config reproduces the run without defaults.
    pub fn resolve(&mut self) {
        if self.run.process == Process::Eps && self.run.eps.is_none() {
            self.run.eps = self.eps.last().copied();
        }
        self.limit_n_steps.get_or_insert(self.n_steps);
        self.run.n_paths.get_or_insert(self.n_paths);
        self.run.record_every.get_or_insert(1);
        if let Some(l) = &mut self.lemma {
            l.x0.get_or_insert(self.x0);
            l.horizon.get_or_insert(self.horizon);
            l.n_steps.get_or_insert(self.n_steps);
            l.n_paths.get_or_insert(self.n_paths);
        }
    }

    /// Parses one expression and substitutes `params`.
    pub fn expression(&self, path: &str, source: &str) -> Result<Expr, ConfigError> {
        let e = expr::parse_expr(source).map_err(|e| field(path, e.to_string()))?;
        e.bind(&self.params).map_err(|e| field(path, e.to_string()))
    }

    pub fn coefficient(&self, path: &str, src: &CoefficientSource) -> Result<ScalarCoefficient, ConfigError> {
        let (text, bps) = src.parts();
        let e = self.expression(path, text)?;
        let bps = bps
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let p = format!("{path}.breakpoints[{i}]");
                let be = self.expression(&p, b)?;
                if be.references_x() {
                    return Err(field(p, "breakpoints may depend on eps and params only"));
                }
                Ok(be)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(expr::to_coefficient(text, e, bps))
    }

    /// A coefficient that must not depend on `eps`.
    pub fn state_coefficient(&self, path: &str, src: &CoefficientSource) -> Result<ScalarCoefficient, ConfigError> {
        let c = self.coefficient(path, src)?;
        if c.is_eps_dependent() {
            return Err(field(path, "limit coefficients must not depend on eps"));
        }
        Ok(c)
    }

    /// Builds a two-branch map, differentiating each branch symbolically.
    pub fn piecewise(&self, path: &str, pair: &BranchPair) -> Result<PiecewiseC2, ConfigError> {
        let left = self.branch(&format!("{path}.left"), Side::Left, &pair.left)?;
        let right = self.branch(&format!("{path}.right"), Side::Right, &pair.right)?;
        PiecewiseC2::new(left, right).map_err(|e| field(path, e.to_string()))
    }

    fn branch(&self, path: &str, side: Side, source: &str) -> Result<SmoothBranch, ConfigError> {
        let e = self.expression(path, source)?;
        if e.references_eps() {
            return Err(field(path, "branches must not depend on eps"));
        }
        let d1 = e.derivative().map_err(|err| field(path, err.to_string()))?;
        let d2 = d1.derivative().map_err(|err| field(path, err.to_string()))?;
        let at = |e: Expr| move |x: f64| e.eval(x, f64::NAN).unwrap_or(f64::NAN);
        SmoothBranch::new(side, at(e), at(d1), at(d2)).map_err(|err| field(path, err.to_string()))
    }

    /// Builds and validates the ε-family over the ladder plus `extra_eps`.
    pub fn family(&self, extra_eps: &[f64]) -> Result<CoefficientFamily, ConfigError> {
        let c = &self.coefficients;
        let spec = FamilySpec {
            b_eps: self.coefficient("coefficients.b_eps", &c.b_eps)?,
            g_eps: self.coefficient("coefficients.g_eps", &c.g_eps)?,
            sigma_eps: self.coefficient("coefficients.sigma_eps", &c.sigma_eps)?,
            limit_g: self.state_coefficient("coefficients.g", &c.g)?,
            limit_sigma: self.state_coefficient("coefficients.sigma", &c.sigma)?,
            limit_f: self.piecewise("limit_f", &self.limit_f)?,
            bounds: ClassBounds {
                lambda: self.bounds.lambda,
                big_lambda: self.bounds.big_lambda,
            },
        };
        let mut ladder = self.eps.clone();
        ladder.extend_from_slice(extra_eps);
        CoefficientFamily::new(spec, &ladder).map_err(|e| field("coefficients", e.to_string()))
    }
}

fn check_skew(path: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(b) if !(b.abs() < 1.0) => Err(field(path, format!("|{path}| < 1 required, got {b}"))),
        _ => Ok(()),
    }
}
