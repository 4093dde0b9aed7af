use thiserror::Error;

use crate::scenarios::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate parameters: {0}")]
    DegenerateParams(String),

    #[error("degenerate cost weights: {0}")]
    DegenerateWeights(String),

    #[error("invalid control signal: {0}")]
    InvalidControl(String),

    /// A compartment went negative by more than roundoff; usually the step is too large.
    #[error("integration unstable at t = {t}: compartment {compartment} reached {value:e}")]
    Stability { t: f64, compartment: usize, value: f64 },

    #[error("impulse schedule: {0}")]
    Schedule(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("NaN encountered in {0}")]
    NotANumber(&'static str),

    #[error("invalid range: {0}")]
    Range(String),

    #[error("oracle search space has {candidates} candidates, limit is {limit}")]
    ExplosionGuard { candidates: f64, limit: f64 },

    #[error("perturbed control leaves the admissible box: {0}")]
    BoxViolation(String),

    #[error("unknown disease preset `{0}`")]
    UnknownPreset(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid configuration ({} violation(s)):\n  {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\n  "))]
    InvalidConfig(Vec<Violation>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
