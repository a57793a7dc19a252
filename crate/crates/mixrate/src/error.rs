use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A moment sequence is not realizable by the requested measure class.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The computation is too ill-conditioned to return a trustworthy answer.
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    /// A constructed atom left the parameter interval.
    #[error("parameter domain: {0}")]
    Domain(String),

    /// An empirical diagnostic failed (degenerate regression, broken
    /// ultrametricity, excessive replicate failures).
    #[error("diagnostic: {0}")]
    Diagnostic(String),
}

pub type Result<T> = std::result::Result<T, Error>;
