use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::agent::{AgentConfig, AgentError, NetConfig};
use crate::sim::{NetworkConfig, SimConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedSource {
    /// Seeded Poisson arrivals at `sim.arrival_rates`.
    Synthetic,
    /// Enter events replayed from the NDJSON file at `feed.path`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedConfig {
    pub source: FeedSource,
    /// Input file for `source = "file"`; output file for `gen-feed`
    /// (defaults to `feed.ndjson` in the output directory).
    pub path: Option<PathBuf>,
    pub intersection_id: String,
    /// Length of the generated feed.
    pub duration_s: f64,
    pub service_delay_s: f64,
    pub speed_range_mps: Option<(f64, f64)>,
}

impl Default for FeedConfig {
    fn default() -> Self {
        FeedConfig {
            source: FeedSource::Synthetic,
            path: None,
            intersection_id: "x1".into(),
            duration_s: 3600.0,
            service_delay_s: 20.0,
            speed_range_mps: Some((6.0, 14.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Episodes per seed for `eval`.
    pub eval_episodes: usize,
    /// Checkpoint evaluated by `eval`; defaults to the file `train` writes
    /// for each seed.
    pub checkpoint: Option<PathBuf>,
    pub sim: SimConfig,
    /// When set, `train` runs one agent per intersection and `sim` is unused.
    pub network: Option<NetworkConfig>,
    pub agent: AgentConfig,
    pub net: NetConfig,
    pub feed: FeedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            episodes: 1000,
            seeds: vec![1],
            output_dir: PathBuf::from("runs"),
            eval_episodes: 20,
            checkpoint: None,
            sim: SimConfig::default(),
            network: None,
            agent: AgentConfig::default(),
            net: NetConfig::default(),
            feed: FeedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Schema {
    Leaf,
    Table(&'static [(&'static str, Schema)]),
    TableArray(&'static [(&'static str, Schema)]),
}

use Schema::{Leaf, Table, TableArray};

const NORMALIZATION: &[(&str, Schema)] = &[("queue_vehicles", Leaf), ("waiting_s", Leaf), ("interval_count", Leaf)];

const SIM: &[(&str, Schema)] = &[
    ("roads_count", Leaf),
    ("green_duration_s", Leaf),
    ("inter_green_s", Leaf),
    ("saturation_headway_s", Leaf),
    ("arrival_rates", Leaf),
    ("episode_length_s", Leaf),
    ("queue_capacity", Leaf),
    ("fairness_weight", Leaf),
    ("enable_speed_term", Leaf),
    ("enable_stuck_term", Leaf),
    ("stuck_probability", Leaf),
    ("normalization", Table(NORMALIZATION)),
];

const LINK: &[(&str, Schema)] = &[
    ("from_intersection", Leaf),
    ("from_road", Leaf),
    ("to_intersection", Leaf),
    ("to_road", Leaf),
    ("travel_time_s", Leaf),
    ("turn_fraction", Leaf),
];

const NETWORK: &[(&str, Schema)] = &[("intersections", TableArray(SIM)), ("links", TableArray(LINK))];

const AGENT: &[(&str, Schema)] = &[
    ("variant", Leaf),
    ("gamma", Leaf),
    ("n_step", Leaf),
    ("batch_size", Leaf),
    ("buffer_capacity", Leaf),
    ("target_sync_interval", Leaf),
    ("train_start", Leaf),
    ("train_every", Leaf),
    ("lr", Leaf),
    ("max_grad_norm", Leaf),
    ("alpha", Leaf),
    ("priority_eps", Leaf),
    ("beta_start", Leaf),
    ("beta_end", Leaf),
    ("epsilon_start", Leaf),
    ("epsilon_end", Leaf),
    ("epsilon_fraction", Leaf),
    ("schedule_steps", Leaf),
    ("reward_scale", Leaf),
    ("bootstrap_on_timeout", Leaf),
];

const NET: &[(&str, Schema)] = &[
    ("hidden", Leaf),
    ("n_atoms", Leaf),
    ("v_min", Leaf),
    ("v_max", Leaf),
    ("sigma_init", Leaf),
];

const FEED: &[(&str, Schema)] = &[
    ("source", Leaf),
    ("path", Leaf),
    ("intersection_id", Leaf),
    ("duration_s", Leaf),
    ("service_delay_s", Leaf),
    ("speed_range_mps", Leaf),
];

const RUN: &[(&str, Schema)] = &[
    ("episodes", Leaf),
    ("seeds", Leaf),
    ("output_dir", Leaf),
    ("eval_episodes", Leaf),
    ("checkpoint", Leaf),
    ("sim", Table(SIM)),
    ("network", Table(NETWORK)),
    ("agent", Table(AGENT)),
    ("net", Table(NET)),
    ("feed", Table(FEED)),
];

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn nearest(key: &str, fields: &[(&str, Schema)]) -> Option<String> {
    fields
        .iter()
        .map(|(name, _)| (strsim::damerau_levenshtein(key, name), *name))
        .filter(|(d, name)| *d <= 3.max(name.len() / 3))
        .min_by_key(|(d, _)| *d)
        .map(|(_, name)| name.to_string())
}

fn check_table(table: &toml::Table, fields: &[(&str, Schema)], prefix: &str) -> Result<(), ConfigError> {
    for (key, value) in table {
        let path = join(prefix, key);
        let Some((_, schema)) = fields.iter().find(|(name, _)| name == key) else {
            return Err(ConfigError::UnknownKey {
                suggestion: nearest(key, fields).map(|s| join(prefix, &s)),
                key: path,
            });
        };
        match (schema, value) {
            (Table(sub), toml::Value::Table(t)) => check_table(t, sub, &path)?,
            (TableArray(sub), toml::Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    let item_path = format!("{path}[{i}]");
                    match item {
                        toml::Value::Table(t) => check_table(t, sub, &item_path)?,
                        _ => return Err(ConfigError::invalid(item_path, "expected a table")),
                    }
                }
            }
            (Table(_), _) => return Err(ConfigError::invalid(path, "expected a table")),
            (TableArray(_), _) => return Err(ConfigError::invalid(path, "expected an array of tables")),
            (Leaf, _) => {}
        }
    }
    Ok(())
}

fn prefixed_sim(prefix: &str, e: SimError) -> ConfigError {
    match e {
        SimError::InvalidConfig { field, reason } => ConfigError::invalid(join(prefix, &field), reason),
        SimError::InvalidLink { link, reason } => ConfigError::invalid(format!("network.links[{link}]"), reason),
        other => ConfigError::invalid(prefix, other.to_string()),
    }
}

fn prefixed_agent(prefix: &str, e: AgentError) -> ConfigError {
    match e {
        AgentError::InvalidConfig { field, reason } => ConfigError::invalid(join(prefix, &field), reason),
        other => ConfigError::invalid(prefix, other.to_string()),
    }
}

impl RunConfig {
    /// Strict parse: unknown keys are errors, defaults fill the rest, and the
    /// result is validated.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string().trim().to_string()))?;
        check_table(&table, RUN, "")?;
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            ConfigError::invalid(e.path().to_string(), e.inner().message().trim().to_string())
        })?;
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default arrival rates written out explicitly.
    pub fn resolved(mut self) -> Self {
        self.sim = self.sim.resolved();
        self.network = self.network.map(NetworkConfig::resolved);
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.episodes < 1 {
            return Err(ConfigError::invalid("episodes", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "at least one seed is required"));
        }
        if self.eval_episodes < 1 {
            return Err(ConfigError::invalid("eval_episodes", "must be at least 1"));
        }
        self.sim.validate().map_err(|e| prefixed_sim("sim", e))?;
        if let Some(net) = &self.network {
            net.validate().map_err(|e| prefixed_sim("network", e))?;
        }
        self.agent.validate().map_err(|e| prefixed_agent("agent", e))?;
        let input = self.sim.observation_len();
        self.net
            .spec_for(self.agent.variant, input, self.sim.roads_count)
            .map_err(|e| prefixed_agent("net", e))?;
        if self.feed.source == FeedSource::File && self.feed.path.is_none() {
            return Err(ConfigError::invalid("feed.path", "required when feed.source = \"file\""));
        }
        if !(self.feed.duration_s >= 0.0 && self.feed.duration_s.is_finite()) {
            return Err(ConfigError::invalid("feed.duration_s", "must be nonnegative"));
        }
        Ok(())
    }

    /// Full configuration with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ConfigError::Missing(path.to_path_buf())
        } else {
            ConfigError::Read {
                path: path.to_path_buf(),
                message: e.to_string(),
            }
        }
    })?;
    RunConfig::from_toml_str(&text)
}
