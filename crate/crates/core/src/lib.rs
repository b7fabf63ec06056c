//! Traffic-signal control with distributional reinforcement learning.
//!
//! The crate is split along the data flow of an experiment:
//!
//! - [`sim`]: a seeded, deterministic intersection simulator (single node or a
//!   routed network) that emits observations and an itemized reward.
//! - [`nn`]: a small double-precision numeric core: fully connected network with
//!   factorized noisy layers, dueling categorical head, categorical projection
//!   and Adam.
//! - [`agent`]: Rainbow training loop (prioritized replay, n-step returns,
//!   double distributional targets), the vanilla DQN and fixed-time baselines,
//!   and the episode / multi-agent runners.
//! - [`feed`]: the NDJSON detection-event format used to drive the simulator
//!   from camera-derived counts.
//! - [`cli`]: configuration, commands and metrics files behind the binary.

pub mod agent;
pub mod cli;
pub mod error;
pub mod feed;
pub mod nn;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
