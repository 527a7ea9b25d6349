//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad key, bad value, or inconsistent settings.
    #[error("config error: {0}")]
    Config(String),

    /// Shape or dimension mismatch between components.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Non-finite values or failed numeric routines.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// API misuse (e.g. stepping a finished episode, mismatched families).
    #[error("usage error: {0}")]
    Usage(String),

    /// Operation requires fresh eigendecompositions but stats changed
    /// without a refresh, or no decomposition exists yet.
    #[error("stale curvature state: {0}")]
    StaleState(String),

    /// Input is structurally valid but degenerate (empty batch, zero
    /// gradients on both objectives).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
