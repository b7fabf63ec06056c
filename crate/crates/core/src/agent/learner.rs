use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{AgentConfig, NetConfig, Variant};
use super::nstep::{NStepAccumulator, Transition};
use super::replay::PrioritizedBuffer;
use super::AgentError;
use crate::nn::{
    adam_step, cross_entropy, expected_value, load_checkpoint, project_distribution, save_checkpoint, softmax,
    NetError, NetNoise, Network, OptimState, ValueSupport,
};
use crate::seed::{rng_for, Stream};
use crate::sim::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Exploration on: fresh noise per forward pass (rainbow) or
    /// epsilon-greedy (vanilla).
    Train,
    /// Mean weights, greedy.
    Eval,
}

/// A sampled batch laid out for the network, `states` and `next_states`
/// row-major `batch x input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub indices: Vec<usize>,
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub returns: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
    pub gamma_ns: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TrainBatch {
    pub fn from_transitions(transitions: &[Transition], weights: Vec<f64>, indices: Vec<usize>) -> Self {
        let mut b = TrainBatch {
            indices,
            states: Vec::new(),
            actions: Vec::with_capacity(transitions.len()),
            returns: Vec::with_capacity(transitions.len()),
            next_states: Vec::new(),
            dones: Vec::with_capacity(transitions.len()),
            gamma_ns: Vec::with_capacity(transitions.len()),
            weights,
        };
        for t in transitions {
            b.states.extend_from_slice(t.state.as_slice());
            b.next_states.extend_from_slice(t.next_state.as_slice());
            b.actions.push(t.action);
            b.returns.push(t.return_n);
            b.dones.push(t.done);
            b.gamma_ns.push(t.gamma_n);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Noise draws used by one loss evaluation; `None` means mean weights.
#[derive(Debug, Clone, Default)]
pub struct BatchNoise {
    pub online: Option<NetNoise>,
    pub online_next: Option<NetNoise>,
    pub target: Option<NetNoise>,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean of the importance-weighted per-sample losses.
    pub loss: f64,
    /// Unweighted per-sample losses (new priorities).
    pub per_sample: Vec<f64>,
    pub grads: Vec<f64>,
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Online and target networks, optimizer, replay and schedules for one
/// learner.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    online: Network,
    target: Network,
    optim: OptimState,
    buffer: PrioritizedBuffer,
    nstep: NStepAccumulator,
    rng: ChaCha8Rng,
    env_steps: u64,
    train_steps: u64,
}

impl Agent {
    pub fn new(
        input_dim: usize,
        n_actions: usize,
        net: &NetConfig,
        config: &AgentConfig,
        seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let spec = net.spec_for(config.variant, input_dim, n_actions)?;
        let mut rng = rng_for(seed, Stream::Agent);
        let online = Network::new(spec, &mut rng)?;
        Ok(Self::assemble(online, config, rng))
    }

    /// Agent around an existing network, e.g. one loaded from a checkpoint.
    pub fn from_network(online: Network, config: &AgentConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let expected_scalar = config.variant == Variant::VanillaDqn;
        if expected_scalar != online.spec().support.is_none() {
            return Err(AgentError::config(
                "variant",
                format!("network head does not match variant {}", config.variant.label()),
            ));
        }
        Ok(Self::assemble(online, config, rng_for(seed, Stream::Agent)))
    }

    fn assemble(online: Network, config: &AgentConfig, rng: ChaCha8Rng) -> Self {
        Agent {
            target: online.clone(),
            optim: OptimState::new(online.n_params(), config.lr),
            buffer: PrioritizedBuffer::new(config.buffer_capacity, config.effective_alpha(), config.priority_eps),
            nstep: NStepAccumulator::new(config.effective_n_step(), config.gamma),
            online,
            config: config.clone(),
            rng,
            env_steps: 0,
            train_steps: 0,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn set_schedule_steps(&mut self, steps: u64) {
        self.config.schedule_steps = steps;
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn online(&self) -> &Network {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Network {
        &mut self.online
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    pub fn buffer(&self) -> &PrioritizedBuffer {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut PrioritizedBuffer {
        &mut self.buffer
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn n_actions(&self) -> usize {
        self.online.spec().n_actions
    }

    pub fn input_dim(&self) -> usize {
        self.online.spec().input_dim
    }

    fn support(&self) -> Option<ValueSupport> {
        self.online.spec().support
    }

    fn progress(&self) -> f64 {
        match self.config.schedule_steps {
            0 => 1.0,
            s => (self.env_steps as f64 / s as f64).min(1.0),
        }
    }

    pub fn beta(&self) -> f64 {
        let c = &self.config;
        c.beta_start + (c.beta_end - c.beta_start) * self.progress()
    }

    pub fn epsilon(&self) -> f64 {
        let c = &self.config;
        let frac = if c.epsilon_fraction > 0.0 {
            (self.progress() / c.epsilon_fraction).min(1.0)
        } else {
            1.0
        };
        c.epsilon_start + (c.epsilon_end - c.epsilon_start) * frac
    }

    /// Per-action values: expected value of each distribution row, or the raw
    /// Q outputs for a scalar head.
    pub fn action_values(&self, observation: &[f64], noise: Option<&NetNoise>) -> Result<Vec<f64>, AgentError> {
        let pass = self.online.forward(observation, 1, noise)?;
        Ok(match self.support() {
            Some(support) => row_expectations(&pass.logits, &support),
            None => pass.logits,
        })
    }

    /// Greedy action under the mean weights.
    pub fn greedy_action(&self, observation: &[f64]) -> Result<usize, AgentError> {
        Ok(argmax(&self.action_values(observation, None)?))
    }

    pub fn select_action(&mut self, observation: &Observation, mode: Mode) -> Result<usize, AgentError> {
        let obs = observation.as_slice();
        match (self.config.variant, mode) {
            (Variant::Rainbow, Mode::Train) => {
                let noise = NetNoise::sample(&self.online, &mut self.rng);
                Ok(argmax(&self.action_values(obs, Some(&noise))?))
            }
            (Variant::VanillaDqn, Mode::Train) => {
                let eps = self.epsilon();
                if eps > 0.0 && self.rng.random::<f64>() < eps {
                    Ok(self.rng.random_range(0..self.n_actions()))
                } else {
                    Ok(argmax(&self.action_values(obs, None)?))
                }
            }
            (_, Mode::Eval) => self.greedy_action(obs),
        }
    }

    /// Records one environment decision. `reward` is the raw environment
    /// reward. Returns the training loss when a gradient step ran.
    pub fn observe(
        &mut self,
        state: Observation,
        action: usize,
        reward: f64,
        next_state: &Observation,
        terminal: bool,
        truncated: bool,
    ) -> Result<Option<f64>, AgentError> {
        let scaled = reward * self.config.reward_scale;
        for t in self.nstep.push(state, action, scaled, next_state, terminal, truncated) {
            self.buffer.push(t);
        }
        self.env_steps += 1;
        if self.buffer.len() >= self.config.train_start && self.env_steps % self.config.train_every == 0 {
            return self.train_step().map(Some);
        }
        Ok(None)
    }

    /// Drops any partially filled n-step window (new episode).
    pub fn end_episode(&mut self) {
        self.nstep.clear();
    }

    /// Samples a prioritized batch at the current beta.
    pub fn prepare_batch(&mut self) -> Result<TrainBatch, AgentError> {
        let beta = self.beta();
        let s = self.buffer.sample(self.config.batch_size, beta, &mut self.rng)?;
        Ok(TrainBatch::from_transitions(&s.transitions, s.weights, s.indices))
    }

    /// Noise draws for one training step (all `None` for the vanilla head).
    pub fn draw_noise(&mut self) -> BatchNoise {
        if !self.online.spec().noisy {
            return BatchNoise::default();
        }
        BatchNoise {
            online: Some(NetNoise::sample(&self.online, &mut self.rng)),
            online_next: Some(NetNoise::sample(&self.online, &mut self.rng)),
            target: Some(NetNoise::sample(&self.target, &mut self.rng)),
        }
    }

    /// Loss and parameter gradients for `batch` without touching any state.
    pub fn loss_and_grad(&self, batch: &TrainBatch, noise: &BatchNoise) -> Result<LossOutput, AgentError> {
        match self.support() {
            Some(support) => self.categorical_loss(batch, noise, &support),
            None => self.scalar_loss(batch),
        }
    }

    fn categorical_loss(&self, batch: &TrainBatch, noise: &BatchNoise, support: &ValueSupport) -> Result<LossOutput, AgentError> {
        let bsz = batch.len();
        let a = self.n_actions();
        let n = support.n_atoms;
        let per = a * n;
        let pass = self.online.forward(&batch.states, bsz, noise.online.as_ref())?;
        let next_online = self.online.forward(&batch.next_states, bsz, noise.online_next.as_ref())?;
        let next_target = self.target.forward(&batch.next_states, bsz, noise.target.as_ref())?;

        let mut dlogits = vec![0.0; bsz * per];
        let mut per_sample = Vec::with_capacity(bsz);
        let mut loss = 0.0;
        let mut probs = vec![0.0; n];
        for b in 0..bsz {
            let q_next = row_expectations(next_online.sample_logits(b, per), support);
            let a_star = argmax(&q_next);
            let target_logits = &next_target.sample_logits(b, per)[a_star * n..(a_star + 1) * n];
            softmax(target_logits, &mut probs);
            let m = project_distribution(batch.returns[b], batch.dones[b], batch.gamma_ns[b], &probs, support);

            let act = batch.actions[b];
            let logits = &pass.sample_logits(b, per)[act * n..(act + 1) * n];
            let l = cross_entropy(logits, &m);
            per_sample.push(l);
            loss += batch.weights[b] * l;

            softmax(logits, &mut probs);
            let scale = batch.weights[b] / bsz as f64;
            let row = &mut dlogits[b * per + act * n..b * per + (act + 1) * n];
            for ((g, p), t) in row.iter_mut().zip(&probs).zip(&m) {
                *g = scale * (p - t);
            }
        }
        let grads = self.online.backward(&pass, &dlogits, noise.online.as_ref())?;
        Ok(LossOutput {
            loss: loss / bsz as f64,
            per_sample,
            grads,
        })
    }

    /// `0.5 * (Q(s,a) - y)^2` with `y = R + gamma_n * max_a' Q_target(s',a')`.
    fn scalar_loss(&self, batch: &TrainBatch) -> Result<LossOutput, AgentError> {
        let bsz = batch.len();
        let a = self.n_actions();
        let pass = self.online.forward(&batch.states, bsz, None)?;
        let next = self.target.forward(&batch.next_states, bsz, None)?;
        let mut dlogits = vec![0.0; bsz * a];
        let mut per_sample = Vec::with_capacity(bsz);
        let mut loss = 0.0;
        for b in 0..bsz {
            let q_next = next.sample_logits(b, a);
            let bootstrap = if batch.dones[b] { 0.0 } else { batch.gamma_ns[b] * q_next[argmax(q_next)] };
            let y = batch.returns[b] + bootstrap;
            let td = pass.sample_logits(b, a)[batch.actions[b]] - y;
            let l = 0.5 * td * td;
            per_sample.push(td.abs());
            loss += batch.weights[b] * l;
            dlogits[b * a + batch.actions[b]] = batch.weights[b] * td / bsz as f64;
        }
        let grads = self.online.backward(&pass, &dlogits, None)?;
        Ok(LossOutput {
            loss: loss / bsz as f64,
            per_sample,
            grads,
        })
    }

    /// Applies one optimizer update from `out` and refreshes priorities.
    pub fn apply_batch(&mut self, batch: &TrainBatch, mut out: LossOutput) -> Result<f64, AgentError> {
        clip_grad_norm(&mut out.grads, self.config.max_grad_norm);
        if let Some(i) = out.grads.iter().position(|g| !g.is_finite()) {
            return Err(NetError::NonFiniteGradient(i).into());
        }
        adam_step(self.online.params_mut(), &out.grads, &mut self.optim)?;
        self.buffer.update_priorities(&batch.indices, &out.per_sample)?;
        self.train_steps += 1;
        if self.train_steps % self.config.target_sync_interval == 0 {
            self.sync_target();
        }
        Ok(out.loss)
    }

    /// One gradient step on a prioritized batch; returns the mean weighted loss.
    pub fn train_step(&mut self) -> Result<f64, AgentError> {
        if self.buffer.len() < self.config.train_start {
            return Err(AgentError::BufferTooSmall {
                size: self.buffer.len(),
                needed: self.config.train_start,
            });
        }
        let batch = self.prepare_batch()?;
        let noise = self.draw_noise();
        let out = self.loss_and_grad(&batch, &noise)?;
        self.apply_batch(&batch, out)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        Ok(save_checkpoint(&self.online, path)?)
    }

    /// Loads a checkpointed online network into a fresh agent.
    pub fn load(path: &Path, config: &AgentConfig, seed: u64) -> Result<Self, AgentError> {
        let net = load_checkpoint(path)?;
        Self::from_network(net, config, seed)
    }
}

fn row_expectations(logits: &[f64], support: &ValueSupport) -> Vec<f64> {
    let n = support.n_atoms;
    let mut probs = vec![0.0; n];
    logits
        .chunks_exact(n)
        .map(|row| {
            softmax(row, &mut probs);
            expected_value(&probs, support)
        })
        .collect()
}

fn clip_grad_norm(grads: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net() -> NetConfig {
        NetConfig {
            hidden: vec![8],
            n_atoms: 11,
            v_min: -5.0,
            v_max: 5.0,
            sigma_init: 0.5,
        }
    }

    fn small_cfg(variant: Variant) -> AgentConfig {
        AgentConfig {
            variant,
            batch_size: 4,
            train_start: 4,
            buffer_capacity: 64,
            target_sync_interval: 3,
            train_every: 1,
            reward_scale: 1.0,
            ..AgentConfig::default()
        }
    }

    fn obs(x: f64) -> Observation {
        Observation(vec![x, 1.0 - x, 0.5])
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.5, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }

    #[test]
    fn identical_rows_select_action_zero() {
        let mut agent = Agent::new(3, 4, &small_net(), &small_cfg(Variant::Rainbow), 1).unwrap();
        // zero every head parameter: all rows become uniform
        let spec = agent.online().spec().clone();
        let shapes = spec.layer_shapes();
        let params = agent.online_mut().params_mut();
        for l in &shapes[1..] {
            for i in l.offset..l.offset + l.len() {
                params[i] = 0.0;
            }
        }
        assert_eq!(agent.select_action(&obs(0.3), Mode::Eval).unwrap(), 0);
        assert_eq!(agent.select_action(&obs(0.3), Mode::Train).unwrap(), 0);
    }

    #[test]
    fn eval_is_repeatable() {
        let mut agent = Agent::new(3, 4, &small_net(), &small_cfg(Variant::Rainbow), 2).unwrap();
        let a = agent.select_action(&obs(0.7), Mode::Eval).unwrap();
        for _ in 0..5 {
            assert_eq!(agent.select_action(&obs(0.7), Mode::Eval).unwrap(), a);
        }
    }

    #[test]
    fn vanilla_zero_epsilon_is_argmax_of_q() {
        let cfg = AgentConfig {
            epsilon_start: 0.0,
            epsilon_end: 0.0,
            ..small_cfg(Variant::VanillaDqn)
        };
        let mut agent = Agent::new(3, 4, &small_net(), &cfg, 3).unwrap();
        assert_eq!(agent.online().spec().n_atoms(), 1);
        for k in 0..10 {
            let o = obs(k as f64 / 10.0);
            let q = agent.online().forward(o.as_slice(), 1, None).unwrap().logits;
            assert_eq!(agent.select_action(&o, Mode::Train).unwrap(), argmax(&q));
        }
    }

    #[test]
    fn train_before_start_fails() {
        let mut agent = Agent::new(3, 2, &small_net(), &small_cfg(Variant::Rainbow), 4).unwrap();
        assert!(matches!(agent.train_step(), Err(AgentError::BufferTooSmall { .. })));
    }

    #[test]
    fn sync_copies_bitwise() {
        for variant in [Variant::Rainbow, Variant::VanillaDqn] {
            let mut agent = Agent::new(3, 2, &small_net(), &small_cfg(variant), 5).unwrap();
            let mut losses = Vec::new();
            let mut k = 0;
            while agent.train_steps() < 3 {
                if let Some(l) = agent.observe(obs(k as f64 / 6.0), k % 2, 1.0, &obs((k + 1) as f64 / 6.0), false, false).unwrap() {
                    losses.push(l);
                }
                k += 1;
            }
            assert!(losses.iter().all(|l| *l >= 0.0));
            assert_eq!(agent.train_steps(), 3);
            assert_eq!(agent.online().params(), agent.target().params());
        }
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let cfg = AgentConfig {
            train_start: 8,
            ..small_cfg(Variant::Rainbow)
        };
        let mut agent = Agent::new(3, 2, &small_net(), &cfg, 6).unwrap();
        let support = agent.online().spec().support.unwrap();
        // head biases put all mass on the atom holding reward 1
        let k = (0..support.n_atoms).find(|&i| (support.atom(i) - 1.0).abs() < 1e-12).unwrap();
        let shapes = agent.online().spec().layer_shapes();
        let params = agent.online_mut().params_mut();
        for l in &shapes[1..] {
            for i in l.offset..l.offset + l.len() {
                params[i] = 0.0;
            }
        }
        let value = shapes[1];
        params[value.b_mu().start + k] = 40.0;
        agent.sync_target();
        for i in 0..4 {
            agent.observe(obs(i as f64 / 4.0), i % 2, 1.0, &obs(0.0), true, false).unwrap();
        }
        let batch = agent.prepare_batch().unwrap();
        let out = agent.loss_and_grad(&batch, &BatchNoise::default()).unwrap();
        assert!(out.loss < 1e-12, "loss {}", out.loss);
        let norm = out.grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-12, "grad norm {norm}");
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let run = || {
            let mut agent = Agent::new(3, 3, &small_net(), &small_cfg(Variant::Rainbow), 9).unwrap();
            let mut out = Vec::new();
            let mut s = obs(0.0);
            for k in 0..40 {
                let a = agent.select_action(&s, Mode::Train).unwrap();
                let next = obs(((k * 7) % 10) as f64 / 10.0);
                out.push(agent.observe(s, a, -(a as f64), &next, false, k % 10 == 9).unwrap());
                s = next;
            }
            (out, agent.online().params().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = AgentConfig {
            schedule_steps: 100,
            ..small_cfg(Variant::VanillaDqn)
        };
        let mut agent = Agent::new(3, 2, &small_net(), &cfg, 1).unwrap();
        assert_eq!(agent.epsilon(), 1.0);
        assert!((agent.beta() - 0.4).abs() < 1e-15);
        for _ in 0..10 {
            agent.observe(obs(0.0), 0, 0.0, &obs(0.0), false, false).unwrap();
        }
        assert!((agent.epsilon() - 0.525).abs() < 1e-12);
        for _ in 0..90 {
            agent.observe(obs(0.0), 0, 0.0, &obs(0.0), false, false).unwrap();
        }
        assert!((agent.epsilon() - 0.05).abs() < 1e-12);
        assert!((agent.beta() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_preserves_eval_actions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        let mut agent = Agent::new(3, 4, &small_net(), &small_cfg(Variant::Rainbow), 11).unwrap();
        agent.save(&path).unwrap();
        let mut loaded = Agent::load(&path, agent.config(), 0).unwrap();
        for k in 0..10 {
            let o = obs(k as f64 / 10.0);
            assert_eq!(
                agent.action_values(o.as_slice(), None).unwrap(),
                loaded.action_values(o.as_slice(), None).unwrap()
            );
            assert_eq!(loaded.select_action(&o, Mode::Eval).unwrap(), agent.select_action(&o, Mode::Eval).unwrap());
        }
        assert!(Agent::load(&path, &small_cfg(Variant::VanillaDqn), 0).is_err());
    }
}
