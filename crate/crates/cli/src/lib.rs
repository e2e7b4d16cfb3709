//! Experiment runner for the `vofrac` solver: reads a TOML configuration,
//! runs one task, and writes CSV results plus a JSON run report.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
mod output;
mod tasks;

use std::fmt;
use std::path::{Path, PathBuf};

pub use compare::{compare_files, ColumnDiff, CompareReport};
pub use config::{ExperimentConfig, Task};

/// Failure of a CLI run, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files: exit 2.
    Config(String),
    /// The numerics failed: exit 3.
    Numerical(vofrac::Error),
    /// Anything else after the inputs were accepted: exit 3.
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(e) => write!(f, "numerical failure: {e}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<vofrac::Error> for CliError {
    fn from(e: vofrac::Error) -> Self {
        CliError::Numerical(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Settings shared by every task-running subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub overrides: Vec<String>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Files written by a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Loads `config_path` and runs `task`.
pub fn run(task: Task, config_path: &Path, options: &RunOptions) -> Result<RunOutcome, CliError> {
    let mut cfg = ExperimentConfig::load(config_path, &options.overrides)?;
    if let Some(seed) = options.seed {
        cfg.seed = seed;
    }
    run_config(task, &cfg, options.out_dir.as_deref())
}

/// Runs `task` on an already parsed configuration.
pub fn run_config(task: Task, cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutcome, CliError> {
    if let Some(t) = cfg.task {
        if t != task {
            return Err(CliError::config(format!(
                "config selects task {t:?} but the subcommand is {task:?}"
            )));
        }
    }
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    tasks::execute(task, cfg, &dir)
}
