use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid problem data: {0}")]
    InvalidData(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
