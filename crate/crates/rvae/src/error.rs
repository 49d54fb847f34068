//! Error types shared across the toolkit.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/matrix dimensions do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller violated an operation contract (e.g. non-scalar loss).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid configuration (window geometry, variant mismatch, ...).
    #[error("config error: {0}")]
    Config(String),

    /// A numeric invariant broke (NaN/Inf where finite values are required).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Serialized artifact (checkpoint, manifest) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// File I/O failure with context.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        Error::Io(format!("wav: {e}"))
    }
}
