use serde::{Deserialize, Serialize};

use super::env::{RoadState, SignalState};
use super::SimConfig;

/// Itemized reward for one decision interval. Penalties are stored as
/// nonnegative magnitudes; `total` applies the signs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub waiting_penalty: f64,
    pub remaining_penalty: f64,
    pub fairness_penalty: f64,
    pub in_reward: f64,
    pub out_reward: f64,
    pub speed_reward: f64,
    pub stuck_penalty: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn signed_total(&self) -> f64 {
        -self.waiting_penalty - self.remaining_penalty - self.fairness_penalty - self.stuck_penalty
            + self.in_reward
            + self.out_reward
            + self.speed_reward
    }

    /// Termwise sum, used for per-episode accounting.
    pub fn accumulate(&mut self, other: &RewardBreakdown) {
        self.waiting_penalty += other.waiting_penalty;
        self.remaining_penalty += other.remaining_penalty;
        self.fairness_penalty += other.fairness_penalty;
        self.in_reward += other.in_reward;
        self.out_reward += other.out_reward;
        self.speed_reward += other.speed_reward;
        self.stuck_penalty += other.stuck_penalty;
        self.total += other.total;
    }
}

/// Reward after one interval:
/// waiting penalty `sum(avg_wait) / (R - 1)`, remaining vehicles after green,
/// weighted spread of average waits, plus vehicles in and out. Speed and
/// stuck-vehicle terms only when enabled in `config`.
pub fn compute_reward(roads: &[RoadState], signal: &SignalState, config: &SimConfig) -> RewardBreakdown {
    let r = roads.len();
    debug_assert!(r >= 2);
    let waits = roads.iter().map(|road| road.avg_waiting_s);
    let waiting_penalty = waits.clone().sum::<f64>() / (r as f64 - 1.0);
    let remaining_penalty = roads.iter().map(|road| road.remaining_after_green as f64).sum();
    let max = waits.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = waits.fold(f64::INFINITY, f64::min);
    let fairness_penalty = (max - min) * config.fairness_weight;
    let in_reward = roads.iter().map(|road| road.in_count as f64).sum();
    let out_reward = roads.iter().map(|road| road.out_count as f64).sum();
    let speed_reward = if config.enable_speed_term {
        roads.iter().map(|road| road.mean_speed_mps).sum()
    } else {
        0.0
    };
    let stuck_penalty = if config.enable_stuck_term {
        signal.stuck_count as f64
    } else {
        0.0
    };
    let mut breakdown = RewardBreakdown {
        waiting_penalty,
        remaining_penalty,
        fairness_penalty,
        in_reward,
        out_reward,
        speed_reward,
        stuck_penalty,
        total: 0.0,
    };
    breakdown.total = breakdown.signed_total();
    breakdown
}
