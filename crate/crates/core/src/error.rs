use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Matrix or vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A linear system could not be factorized or solved.
    #[error("singular system: {0}")]
    Singular(String),

    /// A factorization succeeded but its conditioning exceeds the allowed limit.
    #[error("ill-conditioned operator: condition number {condition:.3e} exceeds limit {limit:.3e}")]
    IllConditioned { condition: f64, limit: f64 },

    /// A filter or selection produced an empty result where at least one item is required.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    /// Artifacts from different protocols or bases were mixed.
    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    /// A file did not match the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
