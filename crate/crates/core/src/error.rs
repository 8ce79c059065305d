use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// `I - A^s` is singular or too badly conditioned to invert.
    #[error("singular model for state {state}: condition estimate {condition:.3e}")]
    SingularModel { state: usize, condition: f64 },

    #[error("matrix is rank deficient: numerical rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("degenerate interval {interval}: Y_t X^+ is not invertible")]
    DegenerateInterval { interval: usize },

    #[error("identifiability violated at node {node}: zero diagonal in (Y_t X^+)^-1")]
    IdentifiabilityViolation { node: usize },

    #[error("node {node} has an all-zero susceptibility row")]
    ZeroSusceptibility { node: usize },

    #[error("proximal gradient iterates diverged (state {state}, iteration {iteration})")]
    Divergence { state: usize, iteration: usize },

    #[error("resource guard: {0}")]
    ResourceGuard(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("cascade {0} has no category mapping")]
    UnmappedCascade(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no data: {0}")]
    EmptyData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures that come from numerics (singular systems,
    /// divergence) rather than from malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularModel { .. }
                | Error::RankDeficient { .. }
                | Error::DegenerateInterval { .. }
                | Error::IdentifiabilityViolation { .. }
                | Error::Divergence { .. }
                | Error::UndefinedMetric(_)
        )
    }
}
