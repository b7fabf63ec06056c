use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;

use super::queue::spawn_arrivals;
use super::SimError;
use crate::feed::{DetectionEvent, EventKind};
use crate::seed::{rng_for, Stream};

/// One vehicle joining the back of a road's queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub road: usize,
    pub t: f64,
    pub speed_mps: Option<f64>,
}

/// Seeded Poisson arrivals generated on a fixed one-second grid.
///
/// The grid makes the arrival sequence independent of how the caller chops
/// time into decision intervals, so two controllers fed the same seed see the
/// same vehicles.
#[derive(Debug, Clone)]
pub struct PoissonArrivals {
    rates: Vec<f64>,
    rng: ChaCha8Rng,
    generated_until: f64,
    pending: VecDeque<Arrival>,
}

const SLOT_S: f64 = 1.0;

impl PoissonArrivals {
    pub fn new(rates: Vec<f64>, seed: u64) -> Self {
        PoissonArrivals {
            rates,
            rng: rng_for(seed, Stream::Arrivals),
            generated_until: 0.0,
            pending: VecDeque::new(),
        }
    }

    fn take_until(&mut self, t_end: f64, out: &mut Vec<Arrival>) -> Result<(), SimError> {
        while self.generated_until < t_end {
            let per_road = spawn_arrivals(self.generated_until, SLOT_S, &self.rates, &mut self.rng)?;
            let mut slot: Vec<Arrival> = per_road
                .into_iter()
                .enumerate()
                .flat_map(|(road, times)| {
                    times.into_iter().map(move |t| Arrival {
                        road,
                        t,
                        speed_mps: None,
                    })
                })
                .collect();
            slot.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.road.cmp(&b.road)));
            self.pending.extend(slot);
            self.generated_until += SLOT_S;
        }
        while self.pending.front().is_some_and(|a| a.t < t_end) {
            out.push(self.pending.pop_front().unwrap());
        }
        Ok(())
    }
}

/// Arrivals replayed from detection events: every `enter` becomes an arrival
/// at `t_ms / 1000` seconds. Exit events are not replayed; departures are
/// produced by the signal model.
#[derive(Debug, Clone)]
pub struct FeedArrivals {
    arrivals: Vec<Arrival>,
    pos: usize,
}

impl FeedArrivals {
    /// Builds the replay list. With `intersection` set, events for other
    /// intersections are skipped.
    pub fn from_events(
        events: &[DetectionEvent],
        roads: usize,
        intersection: Option<&str>,
    ) -> Result<Self, SimError> {
        let mut arrivals = Vec::new();
        for e in events {
            if e.event != EventKind::Enter {
                continue;
            }
            if intersection.is_some_and(|id| id != e.intersection_id) {
                continue;
            }
            let road = e.road_id as usize;
            if road >= roads {
                return Err(SimError::FeedRoadOutOfRange { road, roads });
            }
            arrivals.push(Arrival {
                road,
                t: e.t_ms as f64 / 1000.0,
                speed_mps: e.speed_mps,
            });
        }
        arrivals.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(FeedArrivals { arrivals, pos: 0 })
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    fn take_until(&mut self, t_end: f64, out: &mut Vec<Arrival>) {
        while self.pos < self.arrivals.len() && self.arrivals[self.pos].t < t_end {
            out.push(self.arrivals[self.pos]);
            self.pos += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub enum ArrivalSource {
    Poisson(PoissonArrivals),
    Feed(FeedArrivals),
}

impl ArrivalSource {
    /// Appends, in time order, every not-yet-delivered arrival with `t < t_end`.
    pub fn take_until(&mut self, t_end: f64, out: &mut Vec<Arrival>) -> Result<(), SimError> {
        match self {
            ArrivalSource::Poisson(p) => p.take_until(t_end, out),
            ArrivalSource::Feed(f) => {
                f.take_until(t_end, out);
                Ok(())
            }
        }
    }

    /// Rewinds the source for a new episode.
    pub fn restart(&mut self, seed: u64) {
        match self {
            ArrivalSource::Poisson(p) => *p = PoissonArrivals::new(std::mem::take(&mut p.rates), seed),
            ArrivalSource::Feed(f) => f.pos = 0,
        }
    }
}
