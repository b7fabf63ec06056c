use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::nn::{NetSpec, ValueSupport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Rainbow,
    VanillaDqn,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Rainbow => "rainbow",
            Variant::VanillaDqn => "vanilla_dqn",
        }
    }
}

/// Learner hyperparameters. `vanilla_dqn` ignores `n_step` and `alpha`
/// (it always uses 1-step, uniform replay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub n_step: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_interval: u64,
    pub train_start: usize,
    /// Environment decisions between gradient updates.
    pub train_every: u64,
    pub lr: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
    pub alpha: f64,
    pub priority_eps: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of `schedule_steps` over which epsilon decays.
    pub epsilon_fraction: f64,
    /// Environment decisions the beta / epsilon schedules span. Filled in by
    /// the runners from episodes x decisions when left at 0.
    pub schedule_steps: u64,
    /// Multiplier applied to the environment reward before learning.
    pub reward_scale: f64,
    /// Bootstrap from the final state when an episode ends on the time limit.
    pub bootstrap_on_timeout: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            variant: Variant::Rainbow,
            gamma: 0.99,
            n_step: 3,
            batch_size: 64,
            buffer_capacity: 50_000,
            target_sync_interval: 500,
            train_start: 1000,
            train_every: 4,
            lr: 1e-3,
            max_grad_norm: 10.0,
            alpha: 0.5,
            priority_eps: 1e-3,
            beta_start: 0.4,
            beta_end: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.2,
            schedule_steps: 0,
            reward_scale: 0.01,
            bootstrap_on_timeout: true,
        }
    }
}

impl AgentConfig {
    pub fn vanilla() -> Self {
        AgentConfig {
            variant: Variant::VanillaDqn,
            ..AgentConfig::default()
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        AgentConfig {
            variant,
            ..self.clone()
        }
    }

    pub fn effective_n_step(&self) -> usize {
        match self.variant {
            Variant::Rainbow => self.n_step,
            Variant::VanillaDqn => 1,
        }
    }

    pub fn effective_alpha(&self) -> f64 {
        match self.variant {
            Variant::Rainbow => self.alpha,
            Variant::VanillaDqn => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |f: &str, r: &str| Err(AgentError::config(f, r));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in (0, 1)");
        }
        if self.n_step < 1 {
            return bad("n_step", "must be at least 1");
        }
        if self.batch_size < 1 || self.batch_size > self.buffer_capacity {
            return bad("batch_size", "must be in [1, buffer_capacity]");
        }
        if self.train_start < self.batch_size {
            return bad("train_start", "must be at least batch_size");
        }
        if self.target_sync_interval < 1 || self.train_every < 1 {
            return bad("target_sync_interval", "intervals must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr", "must be positive");
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm", "must be nonnegative");
        }
        if !(self.alpha >= 0.0) || !(self.priority_eps > 0.0) {
            return bad("alpha", "alpha must be >= 0 and priority_eps > 0");
        }
        if !(0.0..=1.0).contains(&self.beta_start) || !(0.0..=1.0).contains(&self.beta_end) {
            return bad("beta_start", "beta values must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || !(0.0..=1.0).contains(&self.epsilon_fraction)
        {
            return bad("epsilon_start", "epsilon settings must lie in [0, 1]");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale", "must be positive");
        }
        Ok(())
    }
}

/// Network defaults shared by both variants; input and action counts come
/// from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub n_atoms: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub sigma_init: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: vec![128, 128],
            n_atoms: 51,
            v_min: -600.0,
            v_max: 100.0,
            sigma_init: 0.5,
        }
    }
}

impl NetConfig {
    /// Rainbow: dueling, noisy, categorical. Vanilla DQN: plain MLP with a
    /// scalar Q head.
    pub fn spec_for(&self, variant: Variant, input_dim: usize, n_actions: usize) -> Result<NetSpec, AgentError> {
        let spec = match variant {
            Variant::Rainbow => NetSpec {
                input_dim,
                hidden: self.hidden.clone(),
                n_actions,
                support: Some(ValueSupport::new(self.v_min, self.v_max, self.n_atoms)?),
                dueling: true,
                noisy: true,
                sigma_init: self.sigma_init,
            },
            Variant::VanillaDqn => NetSpec {
                input_dim,
                hidden: self.hidden.clone(),
                n_actions,
                support: None,
                dueling: false,
                noisy: false,
                sigma_init: 0.0,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}
