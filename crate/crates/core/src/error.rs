use thiserror::Error;

use crate::training::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "chain {chain} diverged at step {step} (sigma = {sigma:e}, tau/sigma^2 = {step_ratio:e}): {reason}"
    )]
    Diverged {
        chain: u64,
        step: usize,
        sigma: f64,
        step_ratio: f64,
        reason: &'static str,
    },

    #[error("training diverged at step {step} (loss = {loss:e})")]
    TrainingDiverged {
        step: usize,
        loss: f64,
        last_good: Box<Checkpoint>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            found,
        }
    }
}

pub(crate) fn ensure_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dim(context, expected, found))
    }
}
