use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid contact {index}: {reason}")]
    InvalidContact { index: usize, reason: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("rank deficient {factor}: rank {rank}, needed at least {needed}")]
    RankDeficient {
        factor: &'static str,
        rank: usize,
        needed: usize,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("ill-conditioned system (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("unresistible wrench (residual {residual:.3e})")]
    UnresistibleWrench { residual: f64 },

    #[error("degenerate grasp geometry: {0}")]
    DegenerateGeometry(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("object out of reach: {0}")]
    Unreachable(String),

    #[error("adaptation failed: {0}")]
    Adaptation(String),

    #[error("duplicate via-point time {0}")]
    DuplicateTime(f64),

    #[error("priorities at point {index} sum to {sum}, expected 1")]
    PrioritySum { index: usize, sum: f64 },

    #[error("EM did not produce a valid model: {0}")]
    Convergence(String),

    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
