use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::arrivals::{Arrival, ArrivalSource, FeedArrivals, PoissonArrivals};
use super::observation::{observe, Observation};
use super::queue::{avg_waiting, service_slots};
use super::reward::{compute_reward, RewardBreakdown};
use super::{SimConfig, SimError};
use crate::seed::{rng_for, Stream};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadState {
    /// Arrival timestamps of queued vehicles, front = next to depart.
    pub queue: VecDeque<f64>,
    pub in_count: usize,
    pub out_count: usize,
    pub remaining_after_green: usize,
    pub avg_waiting_s: f64,
    pub mean_speed_mps: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalState {
    pub green_road: usize,
    pub remaining_green_s: f64,
    pub in_inter_green: bool,
    pub stuck_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Departure {
    pub road: usize,
    pub t: f64,
}

/// Everything that happened during the most recent decision interval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalLog {
    pub start: f64,
    pub end: f64,
    pub switched: bool,
    pub admitted: Vec<Arrival>,
    /// Subset of `admitted` delivered from other intersections.
    pub injected: Vec<Arrival>,
    pub rejected: usize,
    pub departures: Vec<Departure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
}

/// Episode totals kept for conservation checks and reporting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Totals {
    /// Admitted arrivals per road (source and injected).
    pub arrivals: Vec<usize>,
    pub departures: Vec<usize>,
    pub rejected_source: usize,
    pub rejected_injected: usize,
    pub admitted_injected: usize,
}

#[derive(Debug, Clone)]
pub struct Intersection {
    config: SimConfig,
    seed: u64,
    roads: Vec<RoadState>,
    signal: SignalState,
    now: f64,
    decisions: usize,
    done: bool,
    source: ArrivalSource,
    injected: VecDeque<Arrival>,
    stuck_rng: ChaCha8Rng,
    final_slot_departed: bool,
    totals: Totals,
    checksum: Sha256,
    last: IntervalLog,
}

impl Intersection {
    /// Simulator with seeded Poisson arrivals, already reset.
    pub fn new(config: SimConfig, seed: u64) -> Result<Self, SimError> {
        let config = config.resolved();
        config.validate()?;
        let source = ArrivalSource::Poisson(PoissonArrivals::new(config.arrival_rates.clone(), seed));
        Ok(Self::with_source(config, seed, source))
    }

    /// Simulator whose arrivals are replayed from a detection feed.
    pub fn with_feed(config: SimConfig, seed: u64, feed: FeedArrivals) -> Result<Self, SimError> {
        let config = config.resolved();
        config.validate()?;
        Ok(Self::with_source(config, seed, ArrivalSource::Feed(feed)))
    }

    fn with_source(config: SimConfig, seed: u64, source: ArrivalSource) -> Self {
        let r = config.roads_count;
        let mut env = Intersection {
            roads: vec![RoadState::default(); r],
            signal: SignalState::default(),
            now: 0.0,
            decisions: 0,
            done: false,
            source,
            injected: VecDeque::new(),
            stuck_rng: rng_for(seed, Stream::Stuck),
            final_slot_departed: false,
            totals: Totals::default(),
            checksum: Sha256::new(),
            last: IntervalLog::default(),
            seed,
            config,
        };
        env.reset(seed);
        env
    }

    /// Starts a new episode: empty queues, zero counters, road 0 green with
    /// a full green remaining.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let r = self.config.roads_count;
        self.seed = seed;
        self.roads = vec![RoadState::default(); r];
        self.signal = SignalState {
            green_road: 0,
            remaining_green_s: self.config.green_duration_s,
            in_inter_green: false,
            stuck_count: 0,
        };
        self.now = 0.0;
        self.decisions = 0;
        self.done = false;
        self.source.restart(seed);
        self.injected.clear();
        self.stuck_rng = rng_for(seed, Stream::Stuck);
        self.final_slot_departed = false;
        self.totals = Totals {
            arrivals: vec![0; r],
            departures: vec![0; r],
            ..Totals::default()
        };
        self.checksum = Sha256::new();
        self.last = IntervalLog::default();
        self.observe()
    }

    pub fn observe(&self) -> Observation {
        observe(&self.roads, &self.signal, &self.config)
    }

    /// Serves road `action` for one decision interval.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome, SimError> {
        let r = self.config.roads_count;
        if self.done {
            return Err(SimError::EpisodeDone);
        }
        if action >= r {
            return Err(SimError::ActionOutOfRange { action, roads: r });
        }
        let cfg = &self.config;
        let t0 = self.now;
        let switched = action != self.signal.green_road;
        let inter_green = if switched { cfg.inter_green_s } else { 0.0 };
        let green_start = t0 + inter_green;
        let t1 = green_start + cfg.green_duration_s;
        let slots = service_slots(cfg.green_duration_s, cfg.saturation_headway_s)?;

        for road in &mut self.roads {
            road.in_count = 0;
            road.out_count = 0;
            road.mean_speed_mps = 0.0;
        }
        self.signal.stuck_count = 0;
        if switched && cfg.enable_stuck_term && self.final_slot_departed {
            if self.stuck_rng.random::<f64>() < cfg.stuck_probability {
                self.signal.stuck_count = 1;
            }
        }
        self.signal.in_inter_green = switched;

        let mut incoming = Vec::new();
        self.source.take_until(t1, &mut incoming)?;
        let horizon = cfg.episode_length_s;
        for a in incoming.iter().filter(|a| a.t < horizon) {
            self.checksum.update((a.road as u64).to_le_bytes());
            self.checksum.update(a.t.to_bits().to_le_bytes());
        }
        // Injected vehicles (network mode) may carry timestamps before t0 when
        // the upstream clock ran ahead; they are merged in timestamp order.
        let mut tagged: Vec<(Arrival, bool)> = incoming.into_iter().map(|a| (a, false)).collect();
        while self.injected.front().is_some_and(|a| a.t < t1) {
            tagged.push((self.injected.pop_front().unwrap(), true));
        }
        tagged.sort_by(|a, b| a.0.t.total_cmp(&b.0.t));

        let mut log = IntervalLog {
            start: t0,
            end: t1,
            switched,
            ..IntervalLog::default()
        };
        let mut speed_sum = vec![0.0; r];
        let mut speed_n = vec![0usize; r];
        let mut pending = tagged.into_iter().peekable();
        let mut admit_through = |limit: f64, inclusive: bool, env: &mut Intersection, log: &mut IntervalLog| {
            while let Some((a, injected)) = pending.next_if(|(a, _)| if inclusive { a.t <= limit } else { a.t < limit }) {
                let road = &mut env.roads[a.road];
                if env.config.queue_capacity.is_some_and(|cap| road.queue.len() >= cap) {
                    log.rejected += 1;
                    if injected {
                        env.totals.rejected_injected += 1;
                    } else {
                        env.totals.rejected_source += 1;
                    }
                    continue;
                }
                road.queue.push_back(a.t);
                road.in_count += 1;
                env.totals.arrivals[a.road] += 1;
                if injected {
                    env.totals.admitted_injected += 1;
                    log.injected.push(a);
                }
                if let Some(s) = a.speed_mps {
                    speed_sum[a.road] += s;
                    speed_n[a.road] += 1;
                }
                log.admitted.push(a);
            }
        };

        admit_through(green_start, false, self, &mut log);
        self.signal.green_road = action;
        self.signal.in_inter_green = false;
        self.final_slot_departed = false;
        for k in 0..slots {
            let ts = green_start + k as f64 * self.config.saturation_headway_s;
            admit_through(ts, true, self, &mut log);
            let road = &mut self.roads[action];
            if road.queue.front().is_some_and(|&t| t <= ts) {
                road.queue.pop_front();
                road.out_count += 1;
                self.totals.departures[action] += 1;
                log.departures.push(Departure { road: action, t: ts });
                self.final_slot_departed = k + 1 == slots;
            }
        }
        admit_through(t1, false, self, &mut log);
        drop(admit_through);

        self.now = t1;
        self.signal.remaining_green_s = 0.0;
        self.roads[action].remaining_after_green = self.roads[action].queue.len();
        for (i, road) in self.roads.iter_mut().enumerate() {
            road.avg_waiting_s = avg_waiting(&road.queue, t1);
            road.mean_speed_mps = if speed_n[i] > 0 {
                speed_sum[i] / speed_n[i] as f64
            } else {
                0.0
            };
        }
        self.decisions += 1;
        self.done = self.now >= self.config.episode_length_s;
        self.last = log;
        let reward = compute_reward(&self.roads, &self.signal, &self.config);
        Ok(StepOutcome {
            observation: self.observe(),
            reward,
            done: self.done,
        })
    }

    /// Queues a vehicle delivered from another intersection. It joins the
    /// road's queue during the first interval whose end is after `t`.
    pub fn inject(&mut self, arrival: Arrival) {
        let pos = self.injected.partition_point(|a| a.t <= arrival.t);
        self.injected.insert(pos, arrival);
    }

    pub fn pending_injected(&self) -> usize {
        self.injected.len()
    }

    /// Vehicle-weighted mean wait over every queued vehicle.
    pub fn mean_waiting_s(&self) -> f64 {
        let n: usize = self.roads.iter().map(|r| r.queue.len()).sum();
        if n == 0 {
            return 0.0;
        }
        let total: f64 = self.roads.iter().flat_map(|r| r.queue.iter()).map(|&t| self.now - t).sum();
        total / n as f64
    }

    pub fn queued(&self) -> usize {
        self.roads.iter().map(|r| r.queue.len()).sum()
    }

    /// Hex SHA-256 over the source arrivals consumed so far this episode,
    /// restricted to the episode horizon so that it does not depend on how far
    /// the final interval overshoots.
    pub fn arrival_checksum(&self) -> String {
        self.checksum
            .clone()
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn roads(&self) -> &[RoadState] {
        &self.roads
    }

    pub fn signal(&self) -> &SignalState {
        &self.signal
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn decisions(&self) -> usize {
        self.decisions
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn last_interval(&self) -> &IntervalLog {
        &self.last
    }

    pub fn totals(&self) -> &Totals {
        &self.totals
    }

    pub fn n_actions(&self) -> usize {
        self.config.roads_count
    }

    pub fn observation_len(&self) -> usize {
        self.config.observation_len()
    }
}
