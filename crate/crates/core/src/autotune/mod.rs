//! Latency measurement and genetic-algorithm schedule tuning.

mod ga;
mod measure;
mod tune;

use thiserror::Error;

use crate::codegen::CodegenError;

pub use ga::{ga_search, GaConfig, GaResult};
pub use measure::{measure_interleaved, measure_latency, LatencyConfig, LatencyStats};
pub use tune::{
    decode_assignment, tune_graph, worker_choices, TuningReport, CONFIRM_CANDIDATES, WORKER_CHOICES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("runs must be at least 1")]
    ZeroRuns,
    #[error("run {run} failed: {message}")]
    RunFailed { run: usize, message: String },
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error("search space is empty")]
    EmptySpace,
    #[error(transparent)]
    Codegen(#[from] CodegenError),
}
