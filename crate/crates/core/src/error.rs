use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operating point outside envelope: {0}")]
    LimitViolation(String),

    #[error("battery cannot deliver {power:.1} W at soc {soc:.4} (max {max:.1} W)")]
    PowerInfeasible { power: f64, soc: f64, max: f64 },

    #[error("invalid vehicle model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("non-uniform time grid at sample {index}")]
    NonuniformGrid { index: usize },

    #[error("negative speed at sample {index}")]
    NegativeSpeed { index: usize },

    #[error("cycle too short: {0} samples, need at least 2")]
    CycleTooShort(usize),

    #[error("time grids differ: step {expected} s vs {found} s")]
    GridMismatch { expected: f64, found: f64 },

    #[error("no feasible control at step {step} for any SOC node")]
    AllInfeasible { step: usize },

    #[error("no feasible control sequence (first dead end at horizon step {step})")]
    Infeasible { step: usize },

    #[error("fitted lambda0 = {0} is not positive")]
    NonpositiveLambda(f64),

    #[error("shape mismatch: expected {expected}, got {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("normal equations singular even at damping {mu:e}")]
    SingularUpdate { mu: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
