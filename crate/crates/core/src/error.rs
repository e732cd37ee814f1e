use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural mismatch between vector/matrix shapes.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A scalar or tag argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A probability vector violates the simplex invariants.
    #[error("invalid distribution: {0}")]
    Distribution(String),

    /// An operation was evaluated outside its mathematical domain
    /// (log of zero, geometric mean of a zero entry, undefined ratio).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed (singular system, non-finite values).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An experiment configuration violates its invariants.
    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
