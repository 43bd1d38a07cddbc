use std::io;

use flexsched_qp::QpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("solver failure at step {step}: {msg}")]
    Solver { step: usize, msg: String },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("generation failed: {0}")]
    Generation(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation(_) | Error::Dimension(_) | Error::Layout(_)
        )
    }

    pub(crate) fn parse(path: impl std::fmt::Display, msg: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.to_string(),
            msg: msg.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
