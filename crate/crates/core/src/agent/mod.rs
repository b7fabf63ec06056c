//! Rainbow training loop, baselines, and episode runners.

mod baseline;
mod config;
mod learner;
mod nstep;
mod replay;
mod runner;

pub use baseline::{fixed_time_policy, FixedTime};
pub use config::{AgentConfig, NetConfig, Variant};
pub use learner::{Agent, BatchNoise, LossOutput, Mode, TrainBatch};
pub use nstep::{nstep_return, NStepAccumulator, Transition};
pub use replay::{PrioritizedBuffer, SampledBatch, SumTree};
pub use runner::{
    episode_seed, eval_episode_seed, run_episode, run_evaluation, run_multi_agent, run_training, Controller, EpisodeStats,
    Experience,
};

use thiserror::Error;

use crate::nn::NetError;
use crate::sim::SimError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("replay buffer holds {size} transitions, need {needed}")]
    BufferTooSmall { size: usize, needed: usize },
    #[error("priority index {index} out of range (buffer holds {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("index and error lists differ in length ({indices} vs {errors})")]
    LengthMismatch { indices: usize, errors: usize },
    #[error("invalid agent config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("expected one controller per intersection: {intersections} intersections, {controllers} controllers")]
    ControllerCount { intersections: usize, controllers: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl AgentError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        AgentError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
