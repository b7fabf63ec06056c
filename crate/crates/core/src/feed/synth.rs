use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DetectionEvent, EventKind, FeedError};
use crate::seed::{rng_for, Stream};
use crate::sim::spawn_arrivals;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticFeedOptions {
    pub intersection_id: String,
    /// Seconds between a vehicle's enter and its exit event.
    pub service_delay_s: f64,
    /// Enter speeds are drawn uniformly from this range; `None` omits speeds.
    pub speed_range_mps: Option<(f64, f64)>,
}

impl Default for SyntheticFeedOptions {
    fn default() -> Self {
        SyntheticFeedOptions {
            intersection_id: "x1".into(),
            service_delay_s: 20.0,
            speed_range_mps: Some((6.0, 14.0)),
        }
    }
}

/// Poisson enter events per road over `[0, duration_s)`, each followed by an
/// exit `service_delay_s` later. Output is sorted by `t_ms` and depends only
/// on the inputs and `seed`.
pub fn gen_synthetic_feed(
    rates: &[f64],
    duration_s: f64,
    seed: u64,
    options: &SyntheticFeedOptions,
) -> Result<Vec<DetectionEvent>, FeedError> {
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(FeedError::InvalidInput(format!("duration_s must be nonnegative, got {duration_s}")));
    }
    if let Some(r) = rates.iter().find(|r| !(**r >= 0.0)) {
        return Err(FeedError::InvalidInput(format!("arrival rate must be nonnegative, got {r}")));
    }
    if !(options.service_delay_s >= 0.0) {
        return Err(FeedError::InvalidInput("service_delay_s must be nonnegative".into()));
    }
    let speeds = match options.speed_range_mps {
        Some((lo, hi)) if !(0.0 <= lo && lo <= hi) => {
            return Err(FeedError::InvalidInput("speed range must satisfy 0 <= lo <= hi".into()))
        }
        other => other,
    };
    let mut rng = rng_for(seed, Stream::Feed);
    let mut enters: Vec<(u64, u32, Option<f64>)> = Vec::new();
    let mut t = 0.0;
    while t < duration_s {
        let dt = (duration_s - t).min(1.0);
        let per_road = spawn_arrivals(t, dt, rates, &mut rng).map_err(|e| FeedError::InvalidInput(e.to_string()))?;
        let mut slot: Vec<(u64, u32, Option<f64>)> = Vec::new();
        for (road, times) in per_road.into_iter().enumerate() {
            for at in times {
                let speed = speeds.map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>());
                slot.push(((at * 1000.0).round() as u64, road as u32, speed));
            }
        }
        slot.sort_by_key(|e| (e.0, e.1));
        enters.extend(slot);
        t += 1.0;
    }
    let delay_ms = (options.service_delay_s * 1000.0).round() as u64;
    let mut events = Vec::with_capacity(enters.len() * 2);
    for (track, (t_ms, road, speed)) in enters.into_iter().enumerate() {
        let id = &options.intersection_id;
        events.push(DetectionEvent::new(t_ms, id.clone(), road, track as u64, EventKind::Enter, speed));
        events.push(DetectionEvent::new(t_ms + delay_ms, id.clone(), road, track as u64, EventKind::Exit, None));
    }
    // Stable: at equal timestamps enters keep generation order ahead of later exits.
    events.sort_by_key(|e| e.t_ms);
    Ok(events)
}
