use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by every module of the crate.
///
/// Variants split into two families: validation failures (bad inputs,
/// shapes, malformed files) and numerical failures (divergence,
/// infeasibility, non-convergence). The CLI maps the two families onto
/// distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("coding error: {0}")]
    Coding(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidDistribution(_)
                | Error::InvalidArgument(_)
                | Error::ShapeMismatch { .. }
                | Error::Parse(_)
                | Error::Coding(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
