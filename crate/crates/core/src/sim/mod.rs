//! Deterministic intersection simulator.
//!
//! One [`Intersection`] holds a FIFO queue per approach road and a single
//! green phase. Each call to [`Intersection::step`] serves the chosen road for
//! one decision interval: an all-red inter-green when the phase changes, then a
//! fixed green during which the served queue discharges at the saturation
//! headway. Arrivals come from an [`ArrivalSource`] (seeded Poisson or a
//! detection feed). [`NetworkEnv`] runs several intersections in lockstep and
//! routes departures between them.

mod arrivals;
mod config;
mod env;
mod network;
mod observation;
mod queue;
mod reward;

pub use arrivals::{Arrival, ArrivalSource, FeedArrivals, PoissonArrivals};
pub use config::{Normalization, SimConfig, DEFAULT_ARRIVAL_RATE};
pub use env::{Departure, Intersection, IntervalLog, RoadState, SignalState, StepOutcome};
pub use network::{route_outflow, Link, NetworkConfig, NetworkEnv, RoutedArrival, RoutingOutcome};
pub use observation::{observe, Observation};
pub use queue::{avg_waiting, discharge_green, service_slots, spawn_arrivals};
pub use reward::{compute_reward, RewardBreakdown};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulator config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("action {action} out of range for {roads} roads")]
    ActionOutOfRange { action: usize, roads: usize },
    #[error("step called after the episode finished")]
    EpisodeDone,
    #[error("saturation headway must be positive")]
    ZeroHeadway,
    #[error("arrival rate for road {road} is negative ({rate})")]
    NegativeRate { road: usize, rate: f64 },
    #[error("arrival window length must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("feed event refers to road {road}, intersection has {roads}")]
    FeedRoadOutOfRange { road: usize, roads: usize },
    #[error("link {link}: {reason}")]
    InvalidLink { link: usize, reason: String },
}

impl SimError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
