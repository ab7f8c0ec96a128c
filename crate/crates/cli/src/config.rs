//! Search configuration file.

use fusekit_core::autotune::LatencyConfig;
use fusekit_core::nas::{
    ExternalCommandTrainer, MeasuredFeedback, PeakedTrainer, SearchConfig, SearchSpace, SurrogateTrainer,
    SyntheticFeedback,
};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchFile {
    pub space: SearchSpace,
    #[serde(default)]
    pub search: SearchConfig,
    pub trainer: TrainerSpec,
    pub latency: LatencySpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerSpec {
    Surrogate,
    Peaked(PeakedTrainer),
    /// `command` is split on whitespace after `{layers}`, `{hidden}`,
    /// `{ffn}` and `{heads}` are substituted; its stdout is the accuracy.
    External { command: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencySpec {
    Synthetic { intercept_ms: f64, ms_per_gflop: f64 },
    Measured { runs: usize, warmup: usize },
}

pub enum AnyTrainer {
    Surrogate(SurrogateTrainer),
    Peaked(PeakedTrainer),
    External(ExternalCommandTrainer),
}

impl TrainerSpec {
    pub fn build(&self) -> AnyTrainer {
        match self {
            TrainerSpec::Surrogate => AnyTrainer::Surrogate(SurrogateTrainer),
            TrainerSpec::Peaked(p) => AnyTrainer::Peaked(*p),
            TrainerSpec::External { command } => AnyTrainer::External(ExternalCommandTrainer::new(command.clone())),
        }
    }
}

impl fusekit_core::nas::Trainer for AnyTrainer {
    fn evaluate(&mut self, arch: &fusekit_core::ArchSample) -> Result<f64, fusekit_core::nas::NasError> {
        match self {
            AnyTrainer::Surrogate(t) => t.evaluate(arch),
            AnyTrainer::Peaked(t) => t.evaluate(arch),
            AnyTrainer::External(t) => t.evaluate(arch),
        }
    }
}

pub enum AnyFeedback {
    Synthetic(SyntheticFeedback),
    Measured(MeasuredFeedback),
}

impl LatencySpec {
    pub fn build(&self, seq_len: usize, seed: u64) -> AnyFeedback {
        match *self {
            LatencySpec::Synthetic { intercept_ms, ms_per_gflop } => AnyFeedback::Synthetic(SyntheticFeedback {
                intercept_ms,
                ms_per_gflop,
                seq_len,
            }),
            LatencySpec::Measured { runs, warmup } => AnyFeedback::Measured(MeasuredFeedback {
                seq_len,
                latency: LatencyConfig { runs, warmup },
                seed,
            }),
        }
    }
}

impl fusekit_core::nas::CompilerFeedback for AnyFeedback {
    fn measure(
        &mut self,
        arch: &fusekit_core::ArchSample,
    ) -> Result<fusekit_core::nas::Feedback, fusekit_core::nas::NasError> {
        match self {
            AnyFeedback::Synthetic(f) => f.measure(arch),
            AnyFeedback::Measured(f) => f.measure(arch),
        }
    }
}
