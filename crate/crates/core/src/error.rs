use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The CLI maps these onto process exit codes, so the variants follow the
/// failure classes rather than the module that raised them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("truncation needs {needed} eigenpairs but only {available} are available")]
    MoreModesRequired { needed: usize, available: usize },

    #[error("truncation infeasible: 2*gamma*L_tilde*||k - g|| = {value} >= 1, increase N")]
    InfeasibleTruncation { value: f64 },

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("degenerate trace: {0}")]
    DegenerateTrace(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::NumericFailure(msg.into())
}
