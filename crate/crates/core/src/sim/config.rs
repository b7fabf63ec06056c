use serde::{Deserialize, Serialize};

use super::SimError;

/// Arrival rate (vehicles/second) used for every road when a config leaves
/// `arrival_rates` empty.
pub const DEFAULT_ARRIVAL_RATE: f64 = 0.1;

/// Divisors applied to observation entries before clamping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Normalization {
    pub queue_vehicles: f64,
    pub waiting_s: f64,
    pub interval_count: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            queue_vehicles: 50.0,
            waiting_s: 120.0,
            interval_count: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub roads_count: usize,
    pub green_duration_s: f64,
    pub inter_green_s: f64,
    pub saturation_headway_s: f64,
    /// Mean arrivals per second on each road. Empty means
    /// [`DEFAULT_ARRIVAL_RATE`] on every road (see [`SimConfig::resolved`]).
    pub arrival_rates: Vec<f64>,
    pub episode_length_s: f64,
    pub queue_capacity: Option<usize>,
    pub fairness_weight: f64,
    pub enable_speed_term: bool,
    pub enable_stuck_term: bool,
    pub stuck_probability: f64,
    pub normalization: Normalization,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            roads_count: 4,
            green_duration_s: 10.0,
            inter_green_s: 3.0,
            saturation_headway_s: 2.0,
            arrival_rates: Vec::new(),
            episode_length_s: 3600.0,
            queue_capacity: None,
            fairness_weight: 2.0,
            enable_speed_term: false,
            enable_stuck_term: false,
            stuck_probability: 0.0,
            normalization: Normalization::default(),
        }
    }
}

impl SimConfig {
    /// Default config for `roads` approaches with the default arrival rate.
    pub fn with_roads(roads: usize) -> Self {
        SimConfig {
            roads_count: roads,
            ..SimConfig::default()
        }
        .resolved()
    }

    /// Fills an empty `arrival_rates` with the default rate per road.
    pub fn resolved(mut self) -> Self {
        if self.arrival_rates.is_empty() {
            self.arrival_rates = vec![DEFAULT_ARRIVAL_RATE; self.roads_count];
        }
        self
    }

    /// Validates a resolved config.
    pub fn validate(&self) -> Result<(), SimError> {
        if self.roads_count < 2 {
            return Err(SimError::config(
                "roads_count",
                format!("must be at least 2, got {}", self.roads_count),
            ));
        }
        for (name, v) in [
            ("green_duration_s", self.green_duration_s),
            ("inter_green_s", self.inter_green_s),
            ("saturation_headway_s", self.saturation_headway_s),
            ("episode_length_s", self.episode_length_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::config(name, format!("must be positive, got {v}")));
            }
        }
        if self.arrival_rates.len() != self.roads_count {
            return Err(SimError::config(
                "arrival_rates",
                format!(
                    "expected {} entries (one per road), got {}",
                    self.roads_count,
                    self.arrival_rates.len()
                ),
            ));
        }
        if let Some((road, &rate)) = self
            .arrival_rates
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r >= 0.0))
        {
            return Err(SimError::config(
                "arrival_rates",
                format!("road {road}: rate must be finite and nonnegative, got {rate}"),
            ));
        }
        if !(self.fairness_weight.is_finite() && self.fairness_weight >= 0.0) {
            return Err(SimError::config("fairness_weight", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.stuck_probability) {
            return Err(SimError::config("stuck_probability", "must lie in [0, 1]"));
        }
        let n = &self.normalization;
        for (name, v) in [
            ("normalization.queue_vehicles", n.queue_vehicles),
            ("normalization.waiting_s", n.waiting_s),
            ("normalization.interval_count", n.interval_count),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::config(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// Upper bound on decisions per episode (every decision lasts at least
    /// one green).
    pub fn max_decisions(&self) -> usize {
        (self.episode_length_s / self.green_duration_s).ceil() as usize
    }

    pub fn observation_len(&self) -> usize {
        1 + 5 * self.roads_count
    }
}
