//! Double-precision numeric core for distributional Q-learning.
//!
//! Everything here is hand-written for the fixed architectures the agents
//! need: a ReLU MLP trunk, optional factorized-noise linear layers, and either
//! a categorical head (optionally dueling) or a scalar Q head.

mod adam;
mod checkpoint;
mod dist;
mod network;
mod noisy;
mod support;

pub use adam::{adam_step, OptimState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dist::{
    cross_entropy, cross_entropy_grad, dueling_aggregate, expected_value, log_softmax, project_distribution, softmax,
    ActionValueDistribution,
};
pub use network::{forward_dist, LayerShape, NetNoise, NetSpec, Network, ForwardPass};
pub use noisy::{effective_weights, noisy_sample, scale_noise, FactorNoise, NoisyLinearParams};
pub use support::ValueSupport;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),
    #[error("invalid value support: {0}")]
    InvalidSupport(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("target is not a probability distribution (sum {0})")]
    NotADistribution(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
