use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("operation `{0}` has no backward pass")]
    NoBackward(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("layer `{layer}` has shape {found:?}, expected {expected:?}")]
    LayerMismatch {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("training diverged at step {step} (loss {loss}){}", last_good_suffix(.last_good))]
    Diverged {
        step: u64,
        loss: f64,
        last_good: Option<PathBuf>,
    },
}

fn last_good_suffix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!("; last good checkpoint: {}", p.display()),
        None => String::new(),
    }
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Format { .. } => ErrorKind::Io,
            Error::NonFinite(_) | Error::Diverged { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::Invalid(format!($($arg)*)) };
}

pub(crate) use invalid;
pub(crate) use shape_err;
