use super::env::{RoadState, SignalState};
use super::SimConfig;

/// Upper clamp applied to every normalized observation entry.
pub const OBSERVATION_CLAMP: f64 = 5.0;

/// Flat observation vector of length `1 + 5R`:
/// `[remaining green share | one-hot green road | queue lengths | average
/// waits | in counts | out counts]`, each block normalized and clamped to
/// `[0, 5]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for Observation {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn observe(roads: &[RoadState], signal: &SignalState, config: &SimConfig) -> Observation {
    let r = roads.len();
    let norm = &config.normalization;
    let clamp = |x: f64| x.clamp(0.0, OBSERVATION_CLAMP);
    let mut v = Vec::with_capacity(1 + 5 * r);
    v.push(clamp(signal.remaining_green_s / config.green_duration_s));
    v.extend((0..r).map(|i| if i == signal.green_road { 1.0 } else { 0.0 }));
    v.extend(roads.iter().map(|x| clamp(x.queue.len() as f64 / norm.queue_vehicles)));
    v.extend(roads.iter().map(|x| clamp(x.avg_waiting_s / norm.waiting_s)));
    v.extend(roads.iter().map(|x| clamp(x.in_count as f64 / norm.interval_count)));
    v.extend(roads.iter().map(|x| clamp(x.out_count as f64 / norm.interval_count)));
    Observation(v)
}
