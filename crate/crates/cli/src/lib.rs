//! Configuration loading and the `check`, `solve`, `decompose` and `price`
//! commands behind the `gkernel` binary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{run, Command};
pub use config::{Overrides, RunConfig, SCHEMA_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSUMPTION: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gkernel::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("assumption check failed: {0}")]
    Assumption(String),

    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use gkernel::Error as E;
        match self {
            CliError::Assumption(_) => EXIT_ASSUMPTION,
            CliError::Config(_) | CliError::Output { .. } => EXIT_CONFIG,
            CliError::Core(e) => match e {
                E::Divergence { .. } | E::Iteration { .. } | E::Convergence { .. } | E::Coverage { .. } | E::Range(_) => {
                    EXIT_DIVERGENCE
                }
                _ => EXIT_CONFIG,
            },
        }
    }
}
