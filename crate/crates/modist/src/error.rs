//! Crate-wide error type.

/// Errors surfaced by dataset generation, sampling, training and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("ineligible video: {0}")]
    IneligibleVideo(String),
    #[error("no eligible motion window: {0}")]
    NoEligibleClip(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
