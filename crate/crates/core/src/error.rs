use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid argument `{field}`: {reason}")]
    Argument { field: &'static str, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("csv error on line {line}: {reason}")]
    Csv { line: u64, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("class {class} has {count} samples, at least {required} required")]
    ClassTooSmall {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn arg(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Argument {
            field,
            reason: reason.into(),
        }
    }
}
