use std::collections::HashSet;

use super::{DetectionEvent, EventKind, FeedError};

/// Per-road counts for one time window `[start_s, end_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalAggregate {
    pub start_s: f64,
    pub end_s: f64,
    pub in_count: Vec<usize>,
    pub out_count: Vec<usize>,
    /// Mean speed over enter events that carried one; 0 when none did.
    pub mean_speed_mps: Vec<f64>,
    /// Exits whose track had no earlier enter. Still counted in `out_count`.
    pub unmatched_exits: usize,
}

fn aggregate_with(
    events: &[DetectionEvent],
    start_s: f64,
    end_s: f64,
    roads: usize,
    seen: &mut HashSet<(String, u64)>,
) -> Result<IntervalAggregate, FeedError> {
    if !(end_s > start_s) {
        return Err(FeedError::InvalidWindow { start_s, end_s });
    }
    let mut agg = IntervalAggregate {
        start_s,
        end_s,
        in_count: vec![0; roads],
        out_count: vec![0; roads],
        mean_speed_mps: vec![0.0; roads],
        unmatched_exits: 0,
    };
    let mut speed_n = vec![0usize; roads];
    for e in events {
        let t = e.t_ms as f64 / 1000.0;
        if !(start_s..end_s).contains(&t) {
            return Err(FeedError::OutsideWindow {
                t_ms: e.t_ms,
                start_s,
                end_s,
            });
        }
        let road = e.road_id as usize;
        if road >= roads {
            return Err(FeedError::RoadOutOfRange { road: e.road_id, roads });
        }
        match e.event {
            EventKind::Enter => {
                agg.in_count[road] += 1;
                if let Some(s) = e.speed_mps {
                    agg.mean_speed_mps[road] += s;
                    speed_n[road] += 1;
                }
                seen.insert((e.intersection_id.clone(), e.track_id));
            }
            EventKind::Exit => {
                agg.out_count[road] += 1;
                if !seen.remove(&(e.intersection_id.clone(), e.track_id)) {
                    agg.unmatched_exits += 1;
                }
            }
        }
    }
    for (m, n) in agg.mean_speed_mps.iter_mut().zip(speed_n) {
        if n > 0 {
            *m /= n as f64;
        }
    }
    Ok(agg)
}

/// Counts enters and exits per road within one window.
pub fn aggregate_interval(
    events: &[DetectionEvent],
    start_s: f64,
    end_s: f64,
    roads: usize,
) -> Result<IntervalAggregate, FeedError> {
    aggregate_with(events, start_s, end_s, roads, &mut HashSet::new())
}

/// Windowed aggregation over a time-ordered stream, remembering open tracks
/// across windows so exits are matched to enters seen earlier.
#[derive(Debug, Clone, Default)]
pub struct Aggregator {
    roads: usize,
    open_tracks: HashSet<(String, u64)>,
    pub unmatched_exits: usize,
}

impl Aggregator {
    pub fn new(roads: usize) -> Self {
        Aggregator {
            roads,
            ..Aggregator::default()
        }
    }

    /// Aggregates consecutive windows `[b[k], b[k+1])` of a time-ordered
    /// stream. Events past the last boundary are an error.
    pub fn windows(&mut self, events: &[DetectionEvent], boundaries: &[f64]) -> Result<Vec<IntervalAggregate>, FeedError> {
        let mut out = Vec::new();
        let mut rest = events;
        for w in boundaries.windows(2) {
            let split = rest.partition_point(|e| (e.t_ms as f64 / 1000.0) < w[1]);
            let (head, tail) = rest.split_at(split);
            let agg = aggregate_with(head, w[0], w[1], self.roads, &mut self.open_tracks)?;
            self.unmatched_exits += agg.unmatched_exits;
            out.push(agg);
            rest = tail;
        }
        if let Some(e) = rest.first() {
            return Err(FeedError::OutsideWindow {
                t_ms: e.t_ms,
                start_s: boundaries.first().copied().unwrap_or(0.0),
                end_s: boundaries.last().copied().unwrap_or(0.0),
            });
        }
        Ok(out)
    }
}
