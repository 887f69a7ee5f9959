use thiserror::Error;

use crate::params::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mixture parameters: {}", format_violations(.0))]
    InvalidParams(Vec<Violation>),

    #[error("rejection sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("component {component} has vanishing responsibility mass")]
    DegenerateComponent { component: usize },

    #[error("second moment has effective rank below {k}: eigenvalue {value:e} < {rank_tol:e}")]
    RankDeficient { k: usize, value: f64, rank_tol: f64 },

    #[error("tensor decomposition failed: every restart degenerated in round {round}")]
    DecompositionFailure { round: usize },

    #[error("capacity exceeded: {what} = {got} > {max}")]
    Capacity {
        what: &'static str,
        got: usize,
        max: usize,
    },

    #[error("iterate overflow: slot magnitude {value:e} exceeds 1e100")]
    Overflow { value: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// Short machine-readable tag used in benchmark reports.
    pub fn status_tag(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DimensionMismatch { .. } => "invalid-argument",
            Error::InvalidParams(_) => "invalid-params",
            Error::SamplingExhausted { .. } => "sampling-exhausted",
            Error::DegenerateComponent { .. } => "degenerate-component",
            Error::RankDeficient { .. } => "rank-error",
            Error::DecompositionFailure { .. } => "decomposition-failure",
            Error::Capacity { .. } => "capacity-error",
            Error::Overflow { .. } => "overflow-error",
            Error::Parse(_) => "parse-error",
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => "io-error",
        }
    }
}
