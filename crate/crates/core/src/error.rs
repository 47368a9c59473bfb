use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("no bracket for target {target}: value lies outside the reachable range of the map")]
    NoBracket { target: f64 },

    #[error("quadrature on [{a}, {b}] did not converge (estimate {estimate}, error {error})")]
    QuadratureFailure { a: f64, b: f64, estimate: f64, error: f64 },

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("skew parameter {0} violates |beta| < 1")]
    InvalidSkew(f64),

    #[error("bandwidth {delta} is below the floor {floor} (sqrt(dt) * max sigma)")]
    BandwidthTooSmall { delta: f64, floor: f64 },

    #[error("time step {dt} exceeds {max_dt} required to resolve the eps = {eps} drift layer")]
    StepTooCoarse { dt: f64, max_dt: f64, eps: f64 },

    #[error("coefficient `{0}` depends on eps; bind it with `at(eps)` before simulating")]
    UnboundEps(String),

    #[error("ensemble must record every grid step for this operation")]
    IncompleteRecording,

    #[error("invalid branch: {0}")]
    InvalidBranch(String),

    #[error("class L(lambda, Lambda) violated: {0}")]
    ClassViolation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
