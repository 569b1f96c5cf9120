use thiserror::Error;

/// Errors produced by the model, the analytic predictions, the oracles and
/// the Monte Carlo drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid walk state: {0}")]
    InvalidState(String),

    #[error("step probabilities drift from 1 by {drift:e}")]
    ProbabilityDrift { drift: f64 },

    #[error("out of domain: {0}")]
    OutOfDomain(String),

    #[error("series did not converge within {terms} terms")]
    TooSlowConvergence { terms: u64 },

    #[error("n = {n} is too small for the iterated-logarithm envelope")]
    DomainTooSmall { n: u64 },

    #[error("n = {n} exceeds the cap of {cap}")]
    CapExceeded { n: u64, cap: u64 },

    #[error("variance {0:e} is too small to standardize")]
    DegenerateVariance(f64),

    #[error("degenerate parameters: phi = 0, the walk has no fluctuations")]
    Degenerate,

    #[error("sample of size {got} is too small (need at least {need})")]
    SampleTooSmall { got: usize, need: usize },

    #[error("log-log fit needs positive values, got x = {x}, y = {y}")]
    NonPositive { x: f64, y: f64 },

    #[error("operation requires the {expected} regime, parameters are {actual}")]
    WrongRegime {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
