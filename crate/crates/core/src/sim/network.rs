use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arrivals::Arrival;
use super::env::{Departure, Intersection, StepOutcome};
use super::observation::Observation;
use super::{SimConfig, SimError};
use crate::seed::{member_seed, rng_for, Stream};

/// Directed road-to-road connection between two intersections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from_intersection: usize,
    pub from_road: usize,
    pub to_intersection: usize,
    pub to_road: usize,
    #[serde(default)]
    pub travel_time_s: f64,
    /// Share of the source road's departures routed onto this link.
    pub turn_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub intersections: Vec<SimConfig>,
    #[serde(default)]
    pub links: Vec<Link>,
}

impl NetworkConfig {
    pub fn resolved(mut self) -> Self {
        self.intersections = self.intersections.into_iter().map(SimConfig::resolved).collect();
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.intersections.is_empty() {
            return Err(SimError::config("intersections", "network needs at least one intersection"));
        }
        for (i, c) in self.intersections.iter().enumerate() {
            c.validate().map_err(|e| match e {
                SimError::InvalidConfig { field, reason } => {
                    SimError::config(format!("intersections[{i}].{field}"), reason)
                }
                other => other,
            })?;
        }
        validate_links(&self.links, &self.intersections)
    }
}

fn validate_links(links: &[Link], nodes: &[SimConfig]) -> Result<(), SimError> {
    let bad = |link: usize, reason: String| Err(SimError::InvalidLink { link, reason });
    for (k, l) in links.iter().enumerate() {
        for (node, road) in [(l.from_intersection, l.from_road), (l.to_intersection, l.to_road)] {
            match nodes.get(node) {
                None => return bad(k, format!("unknown intersection {node}")),
                Some(c) if road >= c.roads_count => {
                    return bad(k, format!("intersection {node} has no road {road}"))
                }
                _ => {}
            }
        }
        if !(l.travel_time_s.is_finite() && l.travel_time_s >= 0.0) {
            return bad(k, "travel_time_s must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&l.turn_fraction) {
            return bad(k, "turn_fraction must lie in [0, 1]".into());
        }
    }
    for (k, l) in links.iter().enumerate() {
        let share: f64 = links
            .iter()
            .filter(|m| m.from_intersection == l.from_intersection && m.from_road == l.from_road)
            .map(|m| m.turn_fraction)
            .sum();
        if share > 1.0 + 1e-12 {
            return bad(k, format!("turn fractions out of this road sum to {share} > 1"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutedArrival {
    pub from_intersection: usize,
    pub departed_at: f64,
    pub to_intersection: usize,
    pub arrival: Arrival,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoutingOutcome {
    pub routed: Vec<RoutedArrival>,
    pub exited: usize,
}

/// Routes each departure onto at most one outgoing link, chosen by turn
/// fraction; the unrouted share leaves the network. Routed vehicles arrive at
/// the downstream road `travel_time_s` after departing.
pub fn route_outflow<R: Rng + ?Sized>(
    links: &[Link],
    nodes: &[SimConfig],
    departures: &[Vec<Departure>],
    rng: &mut R,
) -> Result<RoutingOutcome, SimError> {
    validate_links(links, nodes)?;
    let mut out = RoutingOutcome::default();
    for (node, deps) in departures.iter().enumerate() {
        for d in deps {
            let mut candidates = links
                .iter()
                .filter(|l| l.from_intersection == node && l.from_road == d.road)
                .peekable();
            if candidates.peek().is_none() {
                out.exited += 1;
                continue;
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let chosen = candidates.find(|l| {
                acc += l.turn_fraction;
                u < acc
            });
            match chosen {
                Some(l) => out.routed.push(RoutedArrival {
                    from_intersection: node,
                    departed_at: d.t,
                    to_intersection: l.to_intersection,
                    arrival: Arrival {
                        road: l.to_road,
                        t: d.t + l.travel_time_s,
                        speed_mps: None,
                    },
                }),
                None => out.exited += 1,
            }
        }
    }
    Ok(out)
}

/// Vehicle accounting across the whole network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetworkCounts {
    pub entered: usize,
    pub exited: usize,
    pub in_transit: usize,
    pub queued: usize,
}

impl NetworkCounts {
    pub fn conserved(&self) -> bool {
        self.entered == self.exited + self.in_transit + self.queued
    }
}

/// Several intersections advanced in lockstep. Each barrier steps every
/// unfinished intersection once, then routes the interval's departures.
#[derive(Debug, Clone)]
pub struct NetworkEnv {
    config: NetworkConfig,
    nodes: Vec<Intersection>,
    rng: ChaCha8Rng,
    routed_exited: usize,
    last_routing: RoutingOutcome,
}

impl NetworkEnv {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, SimError> {
        let config = config.resolved();
        config.validate()?;
        let nodes = config
            .intersections
            .iter()
            .enumerate()
            .map(|(i, c)| Intersection::new(c.clone(), member_seed(seed, i)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(NetworkEnv {
            config,
            nodes,
            rng: rng_for(seed, Stream::Routing),
            routed_exited: 0,
            last_routing: RoutingOutcome::default(),
        })
    }

    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = rng_for(seed, Stream::Routing);
        self.routed_exited = 0;
        self.last_routing = RoutingOutcome::default();
        self.nodes
            .iter_mut()
            .enumerate()
            .map(|(i, n)| n.reset(member_seed(seed, i)))
            .collect()
    }

    /// One barrier. `actions[i]` is ignored for intersections whose episode
    /// already finished; their entry in the result is `None`.
    pub fn step(&mut self, actions: &[usize]) -> Result<Vec<Option<StepOutcome>>, SimError> {
        if actions.len() != self.nodes.len() {
            return Err(SimError::config(
                "actions",
                format!("expected {} actions, got {}", self.nodes.len(), actions.len()),
            ));
        }
        if self.is_done() {
            return Err(SimError::EpisodeDone);
        }
        let mut outcomes = Vec::with_capacity(self.nodes.len());
        let mut departures = Vec::with_capacity(self.nodes.len());
        for (node, &a) in self.nodes.iter_mut().zip(actions) {
            if node.is_done() {
                outcomes.push(None);
                departures.push(Vec::new());
            } else {
                outcomes.push(Some(node.step(a)?));
                departures.push(node.last_interval().departures.clone());
            }
        }
        let routing = route_outflow(&self.config.links, &self.config.intersections, &departures, &mut self.rng)?;
        for r in &routing.routed {
            self.nodes[r.to_intersection].inject(r.arrival);
        }
        self.routed_exited += routing.exited;
        self.last_routing = routing;
        Ok(outcomes)
    }

    pub fn is_done(&self) -> bool {
        self.nodes.iter().all(Intersection::is_done)
    }

    pub fn counts(&self) -> NetworkCounts {
        let mut c = NetworkCounts {
            exited: self.routed_exited,
            ..NetworkCounts::default()
        };
        for n in &self.nodes {
            let t = n.totals();
            c.entered += t.arrivals.iter().sum::<usize>() - t.admitted_injected;
            c.exited += t.rejected_injected;
            c.in_transit += n.pending_injected();
            c.queued += n.queued();
        }
        c
    }

    pub fn last_routing(&self) -> &RoutingOutcome {
        &self.last_routing
    }

    pub fn nodes(&self) -> &[Intersection] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Intersection {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }
}
