//! Process exit codes and the error type that carries them.

use std::fmt;
use std::io;
use std::path::Path;

use hsie_core::{Error, ErrorKind};

pub const OK: u8 = 0;
pub const VALIDATION: u8 = 1;
pub const IO: u8 = 2;
pub const NUMERIC: u8 = 3;
pub const VERIFY: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: VALIDATION,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        Self {
            code: IO,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        Self {
            code: VERIFY,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Validation => VALIDATION,
            ErrorKind::Io => IO,
            ErrorKind::Numeric => NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}
