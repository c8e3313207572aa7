//! Experiment driver behind the `cloudcache` binary: config files, paired
//! multi-seed runs, parameter sweeps and CSV reports.

mod config;
mod experiment;
mod report;

use thiserror::Error;

use crate::engine::EngineError;
use crate::workload::WorkloadError;

pub use config::{
    parse_grid, ConfigError, CostConfig, ExperimentConfig, MonteCarloConfig, PolicyConfig,
    PolicyKind, PopulationConfig, RunConfig, SweepAxis, SweepConfig, WorkloadConfig,
    WorkloadSource,
};
pub use experiment::{analytic_table, AnalyticRow, Experiment, RunRow, SweepReport, ValidationRow};
pub use report::{emit_analytic_csv, emit_csv, emit_validation_csv, write_output, CSV_HEADER};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workload: {0}")]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write report: {0}")]
    Output(String),
}

impl CliError {
    /// 2 for configuration and usage errors, 3 for unreadable or malformed
    /// workloads, 4 when a policy breaks an engine invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Output(_) => 2,
            CliError::Workload(_) => 3,
            CliError::Engine(e) => match e {
                EngineError::OutOfOrder { .. } | EngineError::InvalidTime { .. } => 3,
                EngineError::Violation { .. } | EngineError::Policy { .. } => 4,
                EngineError::NoRequests
                | EngineError::InvalidWindow(_)
                | EngineError::WarmupBeyondSpan { .. } => 2,
            },
        }
    }
}
