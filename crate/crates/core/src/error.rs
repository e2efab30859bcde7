use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Degenerate camera algebra (singular intrinsics, non-orthonormal rotation, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A precondition on operation inputs was violated (shape mismatch, bad range, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// The pipeline cannot produce a meaningful result (e.g. no view overlap at all).
    #[error("pipeline error: {0}")]
    Pipeline(String),

    /// A statistic is undefined for the given data (e.g. zero valid pixels).
    #[error("statistics error: {0}")]
    Statistics(String),

    /// Malformed file content; `line` is 1-based.
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Configuration file rejected (unknown keys, invalid values, ...).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub fn pipeline(msg: impl Into<String>) -> Self {
        Error::Pipeline(msg.into())
    }

    pub fn statistics(msg: impl Into<String>) -> Self {
        Error::Statistics(msg.into())
    }
}
