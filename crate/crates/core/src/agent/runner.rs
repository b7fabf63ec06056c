use serde::Serialize;

use super::baseline::{fixed_time_policy, FixedTime};
use super::learner::{Agent, Mode};
use super::AgentError;
use crate::seed::member_seed;
use crate::sim::{Intersection, NetworkEnv, Observation, RewardBreakdown, StepOutcome};

/// One decision as seen by a learning controller. `done` marks the end of
/// the episode (which is always the time limit).
#[derive(Debug, Clone)]
pub struct Experience {
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}

/// Anything that picks a served road each decision.
pub trait Controller {
    fn label(&self) -> &'static str;

    /// `decision` is the index of this decision within the episode.
    fn act(&mut self, observation: &Observation, decision: usize, train: bool) -> Result<usize, AgentError>;

    /// Returns the loss when a gradient step ran.
    fn learn(&mut self, _experience: Experience) -> Result<Option<f64>, AgentError> {
        Ok(None)
    }

    fn end_episode(&mut self) {}

    /// Total decisions the upcoming training run will make.
    fn plan(&mut self, _total_decisions: u64) {}
}

impl Controller for FixedTime {
    fn label(&self) -> &'static str {
        "fixed_time"
    }

    fn act(&mut self, _observation: &Observation, decision: usize, _train: bool) -> Result<usize, AgentError> {
        Ok(fixed_time_policy(decision, self.roads))
    }
}

impl Controller for Agent {
    fn label(&self) -> &'static str {
        self.variant().label()
    }

    fn act(&mut self, observation: &Observation, _decision: usize, train: bool) -> Result<usize, AgentError> {
        self.select_action(observation, if train { Mode::Train } else { Mode::Eval })
    }

    fn learn(&mut self, e: Experience) -> Result<Option<f64>, AgentError> {
        let truncated = e.done && self.config().bootstrap_on_timeout;
        let terminal = e.done && !truncated;
        self.observe(e.state, e.action, e.reward, &e.next_state, terminal, truncated)
    }

    fn end_episode(&mut self) {
        Agent::end_episode(self);
    }

    fn plan(&mut self, total_decisions: u64) {
        if self.config().schedule_steps == 0 {
            self.set_schedule_steps(total_decisions);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub total_reward: f64,
    /// Per-decision average of the vehicle-weighted mean wait of queued
    /// vehicles.
    pub waiting_mean_s: f64,
    /// Vehicles discharged during the episode.
    pub throughput: usize,
    pub reward_terms: RewardBreakdown,
    pub fairness_mean: f64,
    pub loss_mean: Option<f64>,
    pub decisions: usize,
    pub arrival_checksum: String,
}

/// Environment seed of episode `episode` in the run seeded `seed`. Every
/// controller sees the same arrival sequence for a given (seed, episode).
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    member_seed(seed ^ 0x5EED_0F_E915_0DE5, episode)
}

/// Environment seed of evaluation episode `episode`; disjoint from the
/// training sequence of the same run seed.
pub fn eval_episode_seed(seed: u64, episode: usize) -> u64 {
    member_seed(seed ^ 0xE7A1_0000_5EED_0001, episode)
}

#[derive(Debug, Default)]
struct Tracker {
    terms: RewardBreakdown,
    total: f64,
    waiting: f64,
    throughput: usize,
    decisions: usize,
    loss_sum: f64,
    losses: usize,
}

impl Tracker {
    fn record(&mut self, outcome: &StepOutcome, env: &Intersection, loss: Option<f64>) {
        self.terms.accumulate(&outcome.reward);
        self.total += outcome.reward.total;
        self.waiting += env.mean_waiting_s();
        self.throughput += env.last_interval().departures.len();
        self.decisions += 1;
        if let Some(l) = loss {
            self.loss_sum += l;
            self.losses += 1;
        }
    }

    fn finish(self, episode: usize, env: &Intersection) -> EpisodeStats {
        let d = self.decisions.max(1) as f64;
        EpisodeStats {
            episode,
            total_reward: self.total,
            waiting_mean_s: self.waiting / d,
            throughput: self.throughput,
            fairness_mean: self.terms.fairness_penalty / d,
            reward_terms: self.terms,
            loss_mean: (self.losses > 0).then(|| self.loss_sum / self.losses as f64),
            decisions: self.decisions,
            arrival_checksum: env.arrival_checksum(),
        }
    }
}

fn decide_and_step(
    controller: &mut dyn Controller,
    env: &mut Intersection,
    state: Observation,
    train: bool,
    tracker: &mut Tracker,
) -> Result<Observation, AgentError> {
    let action = controller.act(&state, env.decisions(), train)?;
    let outcome = env.step(action)?;
    let loss = if train {
        controller.learn(Experience {
            state,
            action,
            reward: outcome.reward.total,
            next_state: outcome.observation.clone(),
            done: outcome.done,
        })?
    } else {
        None
    };
    tracker.record(&outcome, env, loss);
    Ok(outcome.observation)
}

/// Plays `env` (already reset) to the end of its episode.
pub fn run_episode(
    controller: &mut dyn Controller,
    env: &mut Intersection,
    episode: usize,
    train: bool,
) -> Result<EpisodeStats, AgentError> {
    let mut tracker = Tracker::default();
    let mut state = env.observe();
    while !env.is_done() {
        state = decide_and_step(controller, env, state, train, &mut tracker)?;
    }
    controller.end_episode();
    Ok(tracker.finish(episode, env))
}

/// `episodes` consecutive episodes, episode `k` reset with
/// [`episode_seed`]`(seed, k)`. `on_episode` sees each result as it lands.
pub fn run_training(
    controller: &mut dyn Controller,
    env: &mut Intersection,
    seed: u64,
    episodes: usize,
    train: bool,
    mut on_episode: impl FnMut(&EpisodeStats),
) -> Result<Vec<EpisodeStats>, AgentError> {
    if train {
        controller.plan((episodes * env.config().max_decisions()) as u64);
    }
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        env.reset(episode_seed(seed, k));
        let stats = run_episode(controller, env, k, train)?;
        on_episode(&stats);
        out.push(stats);
    }
    Ok(out)
}

/// Greedy evaluation episodes (no learning, no exploration), episode `k`
/// reset with [`eval_episode_seed`]`(seed, k)`.
pub fn run_evaluation(
    controller: &mut dyn Controller,
    env: &mut Intersection,
    seed: u64,
    episodes: usize,
) -> Result<Vec<EpisodeStats>, AgentError> {
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        env.reset(eval_episode_seed(seed, k));
        out.push(run_episode(controller, env, k, false)?);
    }
    Ok(out)
}

/// Independent controllers, one per intersection, stepped in lockstep.
/// Result is indexed `[intersection][episode]`.
pub fn run_multi_agent(
    env: &mut NetworkEnv,
    controllers: &mut [&mut dyn Controller],
    seed: u64,
    episodes: usize,
    train: bool,
) -> Result<Vec<Vec<EpisodeStats>>, AgentError> {
    if controllers.len() != env.len() {
        return Err(AgentError::ControllerCount {
            intersections: env.len(),
            controllers: controllers.len(),
        });
    }
    if train {
        for (c, node) in controllers.iter_mut().zip(env.nodes()) {
            c.plan((episodes * node.config().max_decisions()) as u64);
        }
    }
    let mut out = vec![Vec::with_capacity(episodes); env.len()];
    for k in 0..episodes {
        let mut states = env.reset(episode_seed(seed, k));
        let mut trackers: Vec<Tracker> = (0..env.len()).map(|_| Tracker::default()).collect();
        while !env.is_done() {
            let mut actions = vec![0; env.len()];
            for (i, c) in controllers.iter_mut().enumerate() {
                let node = env.node(i);
                if !node.is_done() {
                    actions[i] = c.act(&states[i], node.decisions(), train)?;
                }
            }
            let outcomes = env.step(&actions)?;
            for (i, outcome) in outcomes.into_iter().enumerate() {
                let Some(outcome) = outcome else { continue };
                let loss = if train {
                    controllers[i].learn(Experience {
                        state: std::mem::take(&mut states[i]),
                        action: actions[i],
                        reward: outcome.reward.total,
                        next_state: outcome.observation.clone(),
                        done: outcome.done,
                    })?
                } else {
                    None
                };
                trackers[i].record(&outcome, env.node(i), loss);
                states[i] = outcome.observation;
            }
        }
        for (i, (c, t)) in controllers.iter_mut().zip(trackers).enumerate() {
            c.end_episode();
            out[i].push(t.finish(k, env.node(i)));
        }
    }
    Ok(out)
}
