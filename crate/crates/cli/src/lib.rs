//! Library side of the `bilevel-kit` command line: configuration, problem
//! selection, the three subcommands and atomic trace output.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure during a solve, 4 a derivative check failed.

mod commands;
mod config;
mod output;
mod problems;

use bilevel_core::BilevelError;
use thiserror::Error;

pub use commands::{
    checkgrad, checkgrad_problem, reproduce, run, CheckRow, RunSummary, REPRODUCTIONS,
};
pub use config::{AlphaKind, ExperimentConfig, ProblemKind};
pub use output::OutputSet;
pub use problems::build_problem;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("derivative check failed: {}", .0.join(", "))]
    CheckFailed(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl From<BilevelError> for CliError {
    fn from(e: BilevelError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Runtime {
    pub out_dir: Option<std::path::PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Runtime {
    pub(crate) fn resolve_out(&self, config: Option<&ExperimentConfig>) -> std::path::PathBuf {
        self.out_dir
            .clone()
            .or_else(|| config.and_then(|c| c.output_dir.clone()))
            .unwrap_or_else(|| "bilevel-out".into())
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(CliError::Config("--threads must be >= 1".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Config(e.to_string()))
    }
}
