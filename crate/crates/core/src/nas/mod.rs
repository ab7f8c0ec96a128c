//! Latency-aware architecture search: a recurrent policy proposes encoder
//! configurations, trainers score accuracy, the compiler reports latency,
//! and REINFORCE with a moving-average baseline updates the policy.

mod controller;
mod feedback;
mod reward;
mod search;
mod space;
mod trainer;

use thiserror::Error;

use crate::autotune::TuneError;
use crate::codegen::CodegenError;
use crate::fusion::FusionError;
use crate::graph::GraphError;

pub use controller::{ControllerState, PolicySample, Trajectory, DEFAULT_HIDDEN_WIDTH};
pub use feedback::{CompilerFeedback, Feedback, MeasuredFeedback, SyntheticFeedback};
pub use reward::{baseline_update, compute_reward, RewardMode, INVALID_REWARD};
pub use search::{
    reinforce_update, search, write_history, Episode, SearchConfig, SearchOutcome, SearchResult,
};
pub use space::{default_heads, SearchSpace};
pub use trainer::{
    surrogate_accuracy, ExternalCommandTrainer, PeakedTrainer, SurrogateTrainer, Trainer,
};

#[derive(Debug, Error)]
pub enum NasError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("controller shape mismatch: {0}")]
    Shape(String),
    #[error("invalid reward input: {0}")]
    Reward(String),
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("non-finite gradient from episode {episode}")]
    NonFiniteGradient { episode: usize },
    #[error("trainer failed: {0}")]
    Trainer(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Tune(#[from] TuneError),
}
