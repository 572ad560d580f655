//! Command implementations behind the `lbopt` binary.

pub mod commands;
pub mod config;
pub mod report;
pub mod suites;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] lbopt_core::Error),

    /// An invariant or reproducibility check failed.
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    /// 2 for bad input, 1 for a failed invariant.
    pub fn exit_code(&self) -> i32 {
        use lbopt_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(
                E::InvalidParameter(_) | E::DimensionMismatch { .. } | E::TZero { .. } | E::DimTooSmall { .. },
            ) => 2,
            CliError::Core(_) | CliError::Check(_) => 1,
        }
    }
}
