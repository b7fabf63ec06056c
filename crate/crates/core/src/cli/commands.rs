use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{FeedSource, RunConfig};
use super::metrics::{metrics_csv, MetricsRow};
use super::ConfigError;
use crate::agent::{
    run_evaluation, run_multi_agent, run_training, Agent, Controller, EpisodeStats, FixedTime, Variant,
};
use crate::feed::{gen_synthetic_feed, read_events, write_events, SyntheticFeedOptions};
use crate::nn::save_checkpoint;
use crate::seed::member_seed;
use crate::sim::{FeedArrivals, Intersection, NetworkEnv};
use crate::{Error, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const PARTIAL_SUFFIX: &str = ".partial";

/// Episodes averaged at each end of a learning curve.
pub const CURVE_WINDOW: usize = 100;

fn io_err(what: &str, path: &Path) -> impl FnOnce(std::io::Error) -> Error {
    let context = format!("{what} {}", path.display());
    move |e| Error::io(context, e)
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(PARTIAL_SUFFIX);
    PathBuf::from(s)
}

/// Writes through a `.partial` sibling and renames, so an interrupted write
/// never leaves a file that looks complete.
fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = partial_path(path);
    fs::write(&tmp, bytes).map_err(io_err("write", &tmp))?;
    fs::rename(&tmp, path).map_err(io_err("rename", &tmp))
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(io_err("create directory", out))?;
    let path = out.join(RESOLVED_CONFIG);
    write_file(&path, cfg.to_toml().as_bytes())?;
    Ok(path)
}

pub fn checkpoint_path(out: &Path, variant: Variant, seed: u64) -> PathBuf {
    out.join(format!("{}_seed{seed}.ckpt", variant.label()))
}

fn node_checkpoint_path(out: &Path, variant: Variant, seed: u64, node: usize) -> PathBuf {
    out.join(format!("{}_seed{seed}_i{node}.ckpt", variant.label()))
}

/// The single-intersection environment described by `cfg`.
pub fn build_env(cfg: &RunConfig, seed: u64) -> Result<Intersection> {
    match cfg.feed.source {
        FeedSource::Synthetic => Ok(Intersection::new(cfg.sim.clone(), seed)?),
        FeedSource::File => {
            let path = cfg.feed.path.as_ref().ok_or_else(|| ConfigError::invalid("feed.path", "missing"))?;
            let file = fs::File::open(path).map_err(io_err("open", path))?;
            let events = read_events(BufReader::new(file))?;
            let feed = FeedArrivals::from_events(&events, cfg.sim.roads_count, Some(&cfg.feed.intersection_id))?;
            Ok(Intersection::with_feed(cfg.sim.clone(), seed, feed)?)
        }
    }
}

fn new_agent(cfg: &RunConfig, variant: Variant, env: &Intersection, seed: u64) -> Result<Agent> {
    let agent_cfg = cfg.agent.with_variant(variant);
    Ok(Agent::new(env.observation_len(), env.n_actions(), &cfg.net, &agent_cfg, seed)?)
}

fn progress(seed: u64, label: &str, total: usize) -> impl FnMut(&EpisodeStats) + '_ {
    let every = (total / 10).max(1);
    move |s: &EpisodeStats| {
        if (s.episode + 1) % every == 0 {
            eprintln!(
                "seed {seed} {label}: episode {}/{total} reward {:.1} waiting {:.1}s",
                s.episode + 1,
                s.total_reward,
                s.waiting_mean_s
            );
        }
    }
}

fn rows_for(seed: u64, label: &str, stats: &[EpisodeStats]) -> Vec<MetricsRow> {
    stats.iter().map(|s| MetricsRow::from_stats(seed, label, s)).collect()
}

/// Collects per-seed results in seed order. If any seed failed, whatever
/// completed is written to `<path>.partial` and the first error returned.
fn finish_rows<T>(results: Vec<Result<T>>, path: &Path, rows_of: impl Fn(&T) -> Vec<MetricsRow>) -> Result<Vec<T>> {
    let mut ok = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let rows: Vec<MetricsRow> = ok.iter().flat_map(&rows_of).collect();
    if let Some(e) = first_err {
        let tmp = partial_path(path);
        fs::write(&tmp, metrics_csv(&rows)).map_err(io_err("write", &tmp))?;
        return Err(e);
    }
    write_file(path, metrics_csv(&rows).as_bytes())?;
    Ok(ok)
}

/// Trains `agent.variant` once per seed. Writes `metrics.csv`, one
/// checkpoint per seed and the resolved config; with a network config, one
/// metrics file and checkpoint per intersection.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = vec![prepare_out(cfg, out)?];
    let variant = cfg.agent.variant;
    if let Some(network) = &cfg.network {
        let results: Vec<Result<(u64, Vec<Vec<EpisodeStats>>, Vec<Agent>)>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut env = NetworkEnv::new(network.clone(), seed)?;
                let mut agents = env
                    .nodes()
                    .iter()
                    .enumerate()
                    .map(|(i, node)| new_agent(cfg, variant, node, member_seed(seed, i)))
                    .collect::<Result<Vec<_>>>()?;
                let mut refs: Vec<&mut dyn Controller> = agents.iter_mut().map(|a| a as &mut dyn Controller).collect();
                let stats = run_multi_agent(&mut env, &mut refs, seed, cfg.episodes, true)?;
                Ok((seed, stats, agents))
            })
            .collect();
        let nodes = network.intersections.len();
        let mut done = Vec::new();
        let mut first_err = None;
        for r in results {
            match r {
                Ok(v) => done.push(v),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        for node in 0..nodes {
            let rows: Vec<MetricsRow> = done
                .iter()
                .flat_map(|(seed, stats, _)| rows_for(*seed, variant.label(), &stats[node]))
                .collect();
            let path = out.join(format!("metrics_i{node}.csv"));
            if first_err.is_some() {
                fs::write(partial_path(&path), metrics_csv(&rows)).map_err(io_err("write", &path))?;
            } else {
                write_file(&path, metrics_csv(&rows).as_bytes())?;
                written.push(path);
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        for (seed, _, agents) in &done {
            for (i, agent) in agents.iter().enumerate() {
                let path = node_checkpoint_path(out, variant, *seed, i);
                save_checkpoint(agent.online(), &path)?;
                written.push(path);
            }
        }
        return Ok(written);
    }

    let results: Vec<Result<(u64, Vec<EpisodeStats>, Agent)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut env = build_env(cfg, seed)?;
            let mut agent = new_agent(cfg, variant, &env, seed)?;
            let stats = run_training(&mut agent, &mut env, seed, cfg.episodes, true, progress(seed, variant.label(), cfg.episodes))?;
            Ok((seed, stats, agent))
        })
        .collect();
    let metrics = out.join("metrics.csv");
    let done = finish_rows(results, &metrics, |(seed, stats, _)| rows_for(*seed, variant.label(), stats))?;
    written.push(metrics);
    for (seed, _, agent) in &done {
        let path = checkpoint_path(out, variant, *seed);
        let tmp = partial_path(&path);
        save_checkpoint(agent.online(), &tmp)?;
        fs::rename(&tmp, &path).map_err(io_err("rename", &tmp))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub seed: u64,
    pub variant: String,
    pub episodes: usize,
    pub agent_waiting_mean_s: f64,
    pub fixed_time_waiting_mean_s: f64,
    /// Agent waiting time over fixed-time waiting time.
    pub waiting_ratio: f64,
    pub agent_reward_mean: f64,
    pub fixed_time_reward_mean: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Greedy evaluation of each seed's checkpoint next to fixed-time control on
/// the same evaluation episodes. Writes `eval.csv` and `eval_summary.json`.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.network.is_some() {
        return Err(ConfigError::invalid("network", "eval runs on a single intersection (remove [network])").into());
    }
    let mut written = vec![prepare_out(cfg, out)?];
    let variant = cfg.agent.variant;
    let results: Vec<Result<(u64, Vec<EpisodeStats>, Vec<EpisodeStats>)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let path = cfg.checkpoint.clone().unwrap_or_else(|| checkpoint_path(out, variant, seed));
            let mut agent = Agent::load(&path, &cfg.agent, seed)?;
            let mut env = build_env(cfg, seed)?;
            let learned = run_evaluation(&mut agent, &mut env, seed, cfg.eval_episodes)?;
            let fixed = run_evaluation(&mut FixedTime::new(cfg.sim.roads_count), &mut env, seed, cfg.eval_episodes)?;
            Ok((seed, learned, fixed))
        })
        .collect();
    let csv = out.join("eval.csv");
    let done = finish_rows(results, &csv, |(seed, learned, fixed)| {
        let mut rows = rows_for(*seed, variant.label(), learned);
        rows.extend(rows_for(*seed, "fixed_time", fixed));
        rows
    })?;
    written.push(csv);
    let summary: Vec<EvalSummary> = done
        .iter()
        .map(|(seed, learned, fixed)| {
            let aw = mean(learned.iter().map(|s| s.waiting_mean_s));
            let fw = mean(fixed.iter().map(|s| s.waiting_mean_s));
            EvalSummary {
                seed: *seed,
                variant: variant.label().into(),
                episodes: cfg.eval_episodes,
                agent_waiting_mean_s: aw,
                fixed_time_waiting_mean_s: fw,
                waiting_ratio: if fw > 0.0 { aw / fw } else { f64::NAN },
                agent_reward_mean: mean(learned.iter().map(|s| s.total_reward)),
                fixed_time_reward_mean: mean(fixed.iter().map(|s| s.total_reward)),
            }
        })
        .collect();
    let path = out.join("eval_summary.json");
    write_file(&path, to_json(&summary).as_bytes())?;
    written.push(path);
    Ok(written)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub seed: u64,
    pub variant: String,
    pub episodes: usize,
    /// Mean total reward over the last `window` episodes.
    pub last_mean_reward: f64,
    /// Mean total reward over the first `window` episodes.
    pub first_mean_reward: f64,
    /// Mean waiting time over the last `window` episodes.
    pub last_mean_waiting_s: f64,
    /// SHA-256 over the per-episode arrival checksums.
    pub arrival_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedVerdict {
    pub seed: u64,
    pub reward_winner: String,
    pub waiting_winner: String,
    pub rainbow_beats_vanilla: bool,
    pub rainbow_improves: bool,
    pub arrivals_identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub window: usize,
    pub entries: Vec<VariantSummary>,
    pub verdicts: Vec<SeedVerdict>,
    pub rainbow_beats_vanilla_seeds: usize,
    pub rainbow_improves_seeds: usize,
}

const COMPARED: [&str; 3] = ["rainbow", "vanilla_dqn", "fixed_time"];

fn summarize_variant(seed: u64, label: &str, stats: &[EpisodeStats]) -> VariantSummary {
    let window = CURVE_WINDOW.min(stats.len());
    let last = &stats[stats.len() - window..];
    let mut h = Sha256::new();
    for s in stats {
        h.update(s.arrival_checksum.as_bytes());
    }
    VariantSummary {
        seed,
        variant: label.into(),
        episodes: stats.len(),
        last_mean_reward: mean(last.iter().map(|s| s.total_reward)),
        first_mean_reward: mean(stats[..window].iter().map(|s| s.total_reward)),
        last_mean_waiting_s: mean(last.iter().map(|s| s.waiting_mean_s)),
        arrival_checksum: h.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    }
}

/// Builds the comparison summary from per-(seed, variant) learning curves.
pub fn summarize_compare(runs: &[(u64, &str, Vec<EpisodeStats>)]) -> CompareSummary {
    let entries: Vec<VariantSummary> = runs.iter().map(|(seed, label, s)| summarize_variant(*seed, label, s)).collect();
    let mut seeds: Vec<u64> = entries.iter().map(|e| e.seed).collect();
    seeds.dedup();
    let verdicts: Vec<SeedVerdict> = seeds
        .iter()
        .map(|&seed| {
            let of_seed: Vec<&VariantSummary> = entries.iter().filter(|e| e.seed == seed).collect();
            let find = |label: &str| of_seed.iter().find(|e| e.variant == label).copied();
            let best_by = |key: &dyn Fn(&VariantSummary) -> f64| {
                of_seed
                    .iter()
                    .fold(None::<&VariantSummary>, |best, e| match best {
                        Some(b) if key(b) >= key(e) => Some(b),
                        _ => Some(e),
                    })
                    .map(|e| e.variant.clone())
                    .unwrap_or_default()
            };
            let rainbow = find("rainbow");
            let vanilla = find("vanilla_dqn");
            SeedVerdict {
                seed,
                reward_winner: best_by(&|e| e.last_mean_reward),
                waiting_winner: best_by(&|e| -e.last_mean_waiting_s),
                rainbow_beats_vanilla: matches!((rainbow, vanilla), (Some(r), Some(v)) if r.last_mean_reward > v.last_mean_reward),
                rainbow_improves: rainbow.is_some_and(|r| r.last_mean_reward > r.first_mean_reward),
                arrivals_identical: of_seed.windows(2).all(|w| w[0].arrival_checksum == w[1].arrival_checksum),
            }
        })
        .collect();
    CompareSummary {
        window: CURVE_WINDOW,
        rainbow_beats_vanilla_seeds: verdicts.iter().filter(|v| v.rainbow_beats_vanilla).count(),
        rainbow_improves_seeds: verdicts.iter().filter(|v| v.rainbow_improves).count(),
        entries,
        verdicts,
    }
}

/// Rainbow, vanilla DQN and fixed-time control on the same per-seed episode
/// sequence. Writes `compare.csv` and `summary.json`.
pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if cfg.network.is_some() {
        return Err(ConfigError::invalid("network", "compare runs on a single intersection (remove [network])").into());
    }
    let mut written = vec![prepare_out(cfg, out)?];
    let jobs: Vec<(u64, &str)> = cfg.seeds.iter().flat_map(|&s| COMPARED.map(|l| (s, l))).collect();
    let results: Vec<Result<(u64, &str, Vec<EpisodeStats>)>> = jobs
        .par_iter()
        .map(|&(seed, label)| {
            let mut env = build_env(cfg, seed)?;
            let report = progress(seed, label, cfg.episodes);
            let stats = match label {
                "rainbow" | "vanilla_dqn" => {
                    let variant = if label == "rainbow" { Variant::Rainbow } else { Variant::VanillaDqn };
                    let mut agent = new_agent(cfg, variant, &env, seed)?;
                    run_training(&mut agent, &mut env, seed, cfg.episodes, true, report)?
                }
                _ => run_training(&mut FixedTime::new(cfg.sim.roads_count), &mut env, seed, cfg.episodes, false, report)?,
            };
            Ok((seed, label, stats))
        })
        .collect();
    let csv = out.join("compare.csv");
    let done = finish_rows(results, &csv, |(seed, label, stats)| rows_for(*seed, label, stats))?;
    written.push(csv);
    let path = out.join("summary.json");
    write_file(&path, to_json(&summarize_compare(&done)).as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Synthetic detection feed at `sim.arrival_rates` for `feed.duration_s`,
/// seeded with the first seed. Written to `feed.path` or `feed.ndjson` in
/// the output directory.
pub fn cmd_gen_feed(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let seed = cfg.seeds[0];
    let options = SyntheticFeedOptions {
        intersection_id: cfg.feed.intersection_id.clone(),
        service_delay_s: cfg.feed.service_delay_s,
        speed_range_mps: cfg.feed.speed_range_mps,
    };
    let events = gen_synthetic_feed(&cfg.sim.arrival_rates, cfg.feed.duration_s, seed, &options)?;
    let path = cfg.feed.path.clone().unwrap_or_else(|| out.join("feed.ndjson"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err("create directory", parent))?;
    }
    let mut buf = Vec::new();
    write_events(&mut buf, &events).map_err(io_err("serialize feed for", &path))?;
    write_file(&path, &buf)?;
    Ok(path)
}
