//! Experiment runner: config files, training runs, frozen-weight probes and
//! learning-curve aggregation.

mod config;
mod curves;
mod probe;
mod run;

use thiserror::Error;

pub use config::{ExperimentConfig, CONFIG_KEYS};
pub use curves::{aggregate_curves, emit_curves, read_metrics, CurveRow, MetricsRow, CURVES_FILE, CURVES_HEADER};
pub use probe::{
    estimate, evaluate_agent, evaluate_probe, probe_task, run_oracle, Estimate, OracleTask, Probe, ProbeSpec,
};
pub use run::{run_experiment, run_experiment_with, RunSummary, EPISODES_HEADER};

use crate::agent::AgentError;
use crate::envsim::EnvError;
use crate::learner::LearnerError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config field {key}: {message}")]
    Config { key: String, message: String },
    #[error("probe {probe} does not apply: {message}")]
    Mismatch { probe: String, message: String },
    #[error("missing runs: {}", .0.join(", "))]
    MissingRuns(Vec<String>),
    #[error("malformed metrics in {file}: {message}")]
    Metrics { file: String, message: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } => "config",
            HarnessError::Mismatch { .. } => "mismatch",
            HarnessError::MissingRuns(_) => "missing_runs",
            HarnessError::Metrics { .. } => "metrics",
            HarnessError::Agent(_) => "agent",
            HarnessError::Learner(_) => "learner",
            HarnessError::Env(_) => "env",
            HarnessError::Io(_) => "io",
        }
    }
}
