//! Command-line surface: strict TOML run configuration, the
//! `train | eval | compare | gen-feed` commands and CSV/JSON metrics.

mod commands;
mod config;
mod metrics;

pub use commands::{
    build_env, checkpoint_path, cmd_compare, cmd_eval, cmd_gen_feed, cmd_train, summarize_compare, CompareSummary,
    EvalSummary, SeedVerdict, VariantSummary, CURVE_WINDOW, PARTIAL_SUFFIX, RESOLVED_CONFIG,
};
pub use config::{parse_config, FeedConfig, FeedSource, RunConfig};
pub use metrics::{format_sig, metrics_csv, write_metrics, MetricsRow, METRICS_HEADER};

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "TRAFFICRL_OUT";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config file {0} not found")]
    Missing(PathBuf),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "trafficrl", version, about = "Traffic-signal control with Rainbow DQN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the configured variant for every seed.
    Train(CommonArgs),
    /// Evaluate trained checkpoints against fixed-time control.
    Eval(CommonArgs),
    /// Rainbow vs vanilla DQN vs fixed-time on identical arrivals.
    Compare(CommonArgs),
    /// Write a synthetic detection feed.
    GenFeed(CommonArgs),
}

/// Loads the config and applies command-line overrides; returns it with
/// the output directory to use.
pub fn load(args: &CommonArgs) -> crate::Result<(RunConfig, PathBuf)> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    cfg.output_dir = out.clone();
    Ok((cfg, out))
}

/// Runs one command; returns the files written.
pub fn run(command: &Command) -> crate::Result<Vec<PathBuf>> {
    match command {
        Command::Train(a) => {
            let (cfg, out) = load(a)?;
            cmd_train(&cfg, &out)
        }
        Command::Eval(a) => {
            let (cfg, out) = load(a)?;
            cmd_eval(&cfg, &out)
        }
        Command::Compare(a) => {
            let (cfg, out) = load(a)?;
            cmd_compare(&cfg, &out)
        }
        Command::GenFeed(a) => {
            let (cfg, out) = load(a)?;
            cmd_gen_feed(&cfg, &out).map(|p| vec![p])
        }
    }
}
