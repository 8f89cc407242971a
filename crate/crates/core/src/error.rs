use std::io;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction stack.
#[derive(Debug, Error)]
pub enum RimError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("infeasible mask: calibration region holds {ellipse} samples but the budget is {budget}")]
    InfeasibleMask { ellipse: usize, budget: usize },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = RimError> = std::result::Result<T, E>;

impl RimError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        RimError::InvalidShape(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        RimError::Parse {
            offset,
            message: msg.into(),
        }
    }
}
