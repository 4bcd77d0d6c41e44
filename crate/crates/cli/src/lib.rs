//! Front end for `veripc`: model files, the synthesize / verify / simulate /
//! plot commands, and their on-disk artifacts.

use std::io;
use std::path::PathBuf;

use thiserror::Error;
use veripc_core::hybrid::HybridError;
use veripc_core::mpc::MpcError;

pub mod commands;
pub mod model;
pub mod plot;

pub use commands::{
    cmd_plot, cmd_simulate, cmd_synthesize, cmd_verify, obtain_solution, synthesize, verify, SynthReport,
    VerifyOptions,
};
pub use model::{load_model, write_model, ModelFile, ModelSpec, VerifySpec};

/// Environment variable capping the number of reachability workers.
pub const THREADS_ENV: &str = "VERIPC_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error("bad plot dimensions: {0}")]
    BadDims(String),
    #[error("{0}")]
    Usage(String),
}

/// Worker count from `VERIPC_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
    }
}
