use std::fmt;

use sfr_core::SfrError;

pub const INPUT: i32 = 2;
pub const MISMATCH: i32 = 3;
pub const CONVERGENCE: i32 = 4;
pub const VERIFICATION: i32 = 5;

/// A failure carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: INPUT,
            message: message.into(),
        }
    }

    pub fn with_code(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<SfrError> for CliError {
    fn from(e: SfrError) -> Self {
        let code = match e {
            SfrError::DimensionMismatch(_) | SfrError::Unmatched(_) | SfrError::Factorization(_) => MISMATCH,
            SfrError::Io { .. }
            | SfrError::Format(_)
            | SfrError::InvalidInput(_)
            | SfrError::NonFinite(_)
            | SfrError::EmptyPyramid { .. } => INPUT,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}
