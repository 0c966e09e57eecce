//! Episode metrics, the ρ tradeoff sweep and metric export.
//!
//! Metrics are computed from the decision-tick trace, so a saved trace
//! reproduces them exactly. Each trace row stands for one decision interval
//! of flight. Loss-of-separation counts come from the simulator's event log,
//! which is checked at every physics step.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Controller, Environment, EpisodeRecord, HoldController, TraceRow};
use crate::error::{Error, Result};
use crate::mdp::{RewardConfig, RewardModel};
use crate::network::{AltitudeLayers, Network, Scenario};
use crate::noise::{zone_increase_by_index, NoiseConstants, NpdModel};
use crate::rl::{train, Checkpoint, PolicyController, PolicyParams, TrainConfig};
use crate::sim::SimConfig;
use crate::util::{fmt_sig6, read_to_string, write_atomic};

/// Layer an aircraft is attributed to for one trace row.
///
/// Level aircraft count at their own layer; aircraft between layers count at
/// the layer they departed from.
pub fn departed_layer(row: &TraceRow, layers: &AltitudeLayers) -> usize {
    let nearest = |z: f64| {
        (0..layers.len())
            .min_by(|&a, &b| {
                (layers.level(a) - z)
                    .abs()
                    .total_cmp(&(layers.level(b) - z).abs())
            })
            .expect("layer set is nonempty")
    };
    if !row.b_changing {
        return nearest(row.z_ft);
    }
    let target = nearest(row.z_target_ft);
    if row.z_target_ft > row.z_ft {
        target.saturating_sub(1)
    } else {
        (target + 1).min(layers.top())
    }
}

/// Fraction of airborne time spent at each layer. `None` for an empty trace.
pub fn altitude_histogram(trace: &[TraceRow], layers: &AltitudeLayers) -> Option<Vec<f64>> {
    if trace.is_empty() {
        return None;
    }
    let mut counts = vec![0usize; layers.len()];
    for row in trace {
        counts[departed_layer(row, layers)] += 1;
    }
    let n = trace.len() as f64;
    Some(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Shannon entropy of a histogram, nats.
pub fn histogram_entropy(h: &[f64]) -> f64 {
    h.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

/// Noise increase of one zone over an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSummary {
    pub zone: String,
    /// One entry per decision tick; `None` when no aircraft was overhead.
    pub series: Vec<Option<f64>>,
    /// Mean over ticks with a contribution.
    pub mean_db: Option<f64>,
    pub max_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneNoise {
    /// Decision tick times, s.
    pub times: Vec<f64>,
    pub zones: Vec<ZoneSummary>,
}

/// Per-zone noise increase at every decision tick of a trace.
///
/// Each aircraft sits in the zone of its current link, with the receiver
/// directly below it.
pub fn zone_noise(trace: &[TraceRow], network: &Network, model: &NpdModel) -> Result<ZoneNoise> {
    let constants = NoiseConstants::default();
    let mut by_time: BTreeMap<u64, (f64, Vec<(usize, f64)>)> = BTreeMap::new();
    for row in trace {
        let link = network.link(&row.link).ok_or_else(|| {
            Error::validation(
                format!("trace row {}", row.id),
                format!("unknown link {}", row.link),
            )
        })?;
        by_time
            .entry(row.t.to_bits())
            .or_insert_with(|| (row.t, Vec::new()))
            .1
            .push((network.zone_of_link(link), row.z_ft));
    }
    let mut ticks: Vec<(f64, Vec<(usize, f64)>)> = by_time.into_values().collect();
    ticks.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut series = vec![Vec::with_capacity(ticks.len()); network.zones.len()];
    for (_, aircraft) in &ticks {
        let inc = zone_increase_by_index(&network.zones, aircraft, model, &constants)?;
        for (s, v) in series.iter_mut().zip(inc) {
            s.push(v);
        }
    }
    let zones = network
        .zones
        .iter()
        .zip(series)
        .map(|(z, series)| {
            let present: Vec<f64> = series.iter().flatten().copied().collect();
            ZoneSummary {
                zone: z.id.clone(),
                mean_db: mean(&present),
                max_db: present.iter().copied().reduce(f64::max),
                series,
            }
        })
        .collect();
    Ok(ZoneNoise {
        times: ticks.iter().map(|t| t.0).collect(),
        zones,
    })
}

fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}

pub fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub rho: f64,
    pub seed: u64,
    pub los_count: usize,
    /// Median over zones of the time-mean zone increase; the headline value.
    pub noise_median_db: Option<f64>,
    /// Mean over zones of the time-mean zone increase.
    pub noise_mean_db: Option<f64>,
    /// Largest single-tick increase in any zone.
    pub noise_max_db: Option<f64>,
    /// `(zone id, time-mean increase)` in network order.
    pub zone_mean_db: Vec<(String, Option<f64>)>,
    /// Fraction of airborne time per layer, lowest first.
    pub histogram: Vec<f64>,
    pub top_layer_fraction: f64,
    pub mean_return: f64,
    /// Simulated episode duration, s.
    pub episode_time_s: f64,
}

/// Computes metrics from a trace plus the episode's LOS count and return.
#[allow(clippy::too_many_arguments)]
pub fn metrics_from_trace(
    trace: &[TraceRow],
    network: &Network,
    model: &NpdModel,
    los_count: usize,
    mean_return: f64,
    episode_time_s: f64,
    rho: f64,
    seed: u64,
) -> Result<EpisodeMetrics> {
    let layers = &network.layers;
    let histogram = altitude_histogram(trace, layers).unwrap_or_else(|| vec![0.0; layers.len()]);
    let noise = zone_noise(trace, network, model)?;
    let zone_means: Vec<f64> = noise.zones.iter().filter_map(|z| z.mean_db).collect();
    Ok(EpisodeMetrics {
        rho,
        seed,
        los_count,
        noise_median_db: median(&zone_means),
        noise_mean_db: mean(&zone_means),
        noise_max_db: noise.zones.iter().filter_map(|z| z.max_db).reduce(f64::max),
        zone_mean_db: noise
            .zones
            .iter()
            .map(|z| (z.zone.clone(), z.mean_db))
            .collect(),
        top_layer_fraction: histogram[layers.top()],
        histogram,
        mean_return,
        episode_time_s,
    })
}

/// How aircraft are controlled during evaluation.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Every aircraft holds its altitude.
    Hold,
    Learned(PolicyParams),
}

impl Policy {
    /// Parses `baseline:hold`; anything else is read as a checkpoint path.
    pub fn load(spec: &str) -> Result<(Policy, Option<Checkpoint>)> {
        if spec == "baseline:hold" {
            return Ok((Policy::Hold, None));
        }
        let ck = Checkpoint::load(Path::new(spec))?;
        Ok((Policy::Learned(ck.params.clone()), Some(ck)))
    }
}

/// Builds an environment with the built-in noise model.
pub fn environment(
    scenario: Arc<Scenario>,
    sim: SimConfig,
    reward: RewardConfig,
) -> Result<Environment> {
    sim.validate()?;
    Environment::new(
        scenario,
        sim,
        RewardModel::new(reward, NpdModel::default())?,
    )
}

/// Runs one episode. `greedy` selects argmax actions; otherwise actions are
/// sampled from a generator seeded with `seed`.
pub fn run_episode(
    env: &Environment,
    policy: &Policy,
    seed: u64,
    greedy: bool,
) -> Result<(EpisodeMetrics, EpisodeRecord)> {
    let record = match policy {
        Policy::Hold => env.run(&mut HoldController, None)?,
        Policy::Learned(params) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut controller = PolicyController {
                params,
                rng: (!greedy).then_some(&mut rng),
            };
            env.run(&mut controller as &mut dyn Controller, None)?
        }
    };
    let metrics = metrics_from_trace(
        &record.trace,
        &env.scenario().network,
        env.reward.npd(),
        record.los_events.len(),
        record.mean_return(),
        record.end_time_s,
        env.reward.config.rho,
        seed,
    )?;
    Ok((metrics, record))
}

/// Aggregates over the evaluation seeds of one ρ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub median_noise_increase_db: Option<f64>,
    pub mean_los: f64,
    pub top_layer_fraction: f64,
    pub histogram: Vec<f64>,
    pub histogram_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Every `(ρ, seed)` evaluation, ρ-major.
    pub cells: Vec<EpisodeMetrics>,
}

/// Where sweep policies come from.
pub enum SweepPolicies<'a> {
    /// Train one policy per ρ with this configuration.
    Train(&'a TrainConfig),
    /// One checkpoint per ρ, in `rhos` order.
    Load(Vec<Checkpoint>),
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub result: SweepResult,
    /// One per ρ, in `rhos` order.
    pub checkpoints: Vec<Checkpoint>,
}

/// Trains or loads one policy per ρ and evaluates each over `seeds`.
pub fn sweep_rho(
    scenario: Arc<Scenario>,
    sim: SimConfig,
    rhos: &[f64],
    seeds: &[u64],
    policies: SweepPolicies<'_>,
    greedy: bool,
) -> Result<SweepOutput> {
    let layers = scenario.network.layers.clone();
    let envs = rhos
        .iter()
        .map(|&rho| {
            environment(
                scenario.clone(),
                sim,
                RewardConfig::new(rho, &layers, sim.d_los),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let checkpoints = match policies {
        SweepPolicies::Train(config) => envs
            .par_iter()
            .map(|env| {
                let out = train(env, config, |_, _| Ok(()))?;
                Ok(Checkpoint::new(
                    out.params,
                    config.iterations,
                    *config,
                    env.reward.config,
                    sim,
                    layers.clone(),
                ))
            })
            .collect::<Result<Vec<_>>>()?,
        SweepPolicies::Load(cks) => {
            if cks.len() != rhos.len() {
                return Err(Error::ConfigMismatch(format!(
                    "{} checkpoints for {} rho values",
                    cks.len(),
                    rhos.len()
                )));
            }
            for (ck, &rho) in cks.iter().zip(rhos) {
                ck.check_layers(&layers)?;
                if ck.reward_config.rho != rho {
                    return Err(Error::ConfigMismatch(format!(
                        "checkpoint trained at rho {} used for rho {rho}",
                        ck.reward_config.rho
                    )));
                }
            }
            cks
        }
    };

    let jobs: Vec<(usize, u64)> = (0..rhos.len())
        .flat_map(|r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(r, seed)| {
            let policy = Policy::Learned(checkpoints[r].params.clone());
            run_episode(&envs[r], &policy, seed, greedy).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = rhos
        .iter()
        .enumerate()
        .map(|(r, &rho)| {
            let group = &cells[r * seeds.len()..(r + 1) * seeds.len()];
            summarize(rho, group, layers.len())
        })
        .collect();
    Ok(SweepOutput {
        result: SweepResult { rows, cells },
        checkpoints,
    })
}

/// Aggregates per-seed metrics of one ρ.
pub fn summarize(rho: f64, group: &[EpisodeMetrics], n_layers: usize) -> SweepRow {
    let n = group.len().max(1) as f64;
    let medians: Vec<f64> = group.iter().filter_map(|m| m.noise_median_db).collect();
    let mut histogram = vec![0.0; n_layers];
    for m in group {
        for (h, v) in histogram.iter_mut().zip(&m.histogram) {
            *h += v / n;
        }
    }
    SweepRow {
        rho,
        median_noise_increase_db: median(&medians),
        mean_los: group.iter().map(|m| m.los_count as f64).sum::<f64>() / n,
        top_layer_fraction: histogram.last().copied().unwrap_or(0.0),
        histogram_entropy: histogram_entropy(&histogram),
        histogram,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// From a file extension; CSV unless it ends in `.json`.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig6).unwrap_or_default()
}

fn csv_string(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<String> {
    let enc = |e: csv::Error| Error::Contract(format!("csv encoding: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(enc)?;
    for r in rows {
        w.write_record(&r).map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const METRIC_COLUMNS: [&str; 9] = [
    "rho",
    "seed",
    "los_count",
    "noise_median_db",
    "noise_mean_db",
    "noise_max_db",
    "top_layer_fraction",
    "mean_return",
    "episode_time_s",
];

/// Metrics as CSV. Layer and zone columns follow the fixed ones and are
/// taken from the first entry.
pub fn metrics_csv(metrics: &[EpisodeMetrics], layers: &AltitudeLayers) -> Result<String> {
    let mut header: Vec<String> = METRIC_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(layers.levels().iter().map(|z| format!("frac_{z}ft")));
    if let Some(first) = metrics.first() {
        header.extend(
            first
                .zone_mean_db
                .iter()
                .map(|(id, _)| format!("zone_{id}_db")),
        );
    }
    let rows = metrics
        .iter()
        .map(|m| {
            let mut r = vec![
                fmt_sig6(m.rho),
                m.seed.to_string(),
                m.los_count.to_string(),
                opt(m.noise_median_db),
                opt(m.noise_mean_db),
                opt(m.noise_max_db),
                fmt_sig6(m.top_layer_fraction),
                fmt_sig6(m.mean_return),
                fmt_sig6(m.episode_time_s),
            ];
            r.extend(m.histogram.iter().map(|&h| fmt_sig6(h)));
            r.extend(m.zone_mean_db.iter().map(|(_, v)| opt(*v)));
            r
        })
        .collect();
    csv_string(header, rows)
}

/// Writes metrics as CSV (six significant digits, empty cell for no
/// contribution) or JSON (full precision, `null` for no contribution).
pub fn export_metrics(
    metrics: &[EpisodeMetrics],
    layers: &AltitudeLayers,
    path: &Path,
    format: Format,
) -> Result<()> {
    let text = match format {
        Format::Csv => metrics_csv(metrics, layers)?,
        Format::Json => serde_json::to_string_pretty(metrics).expect("metrics serialize"),
    };
    write_atomic(path, text.as_bytes())
}

pub fn import_metrics_json(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// The tradeoff table, one row per ρ.
pub fn sweep_summary_csv(rows: &[SweepRow], layers: &AltitudeLayers) -> Result<String> {
    let mut header: Vec<String> = [
        "rho",
        "median_noise_increase_db",
        "mean_los",
        "top_layer_fraction",
        "histogram_entropy",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(layers.levels().iter().map(|z| format!("frac_{z}ft")));
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![
                fmt_sig6(r.rho),
                opt(r.median_noise_increase_db),
                fmt_sig6(r.mean_los),
                fmt_sig6(r.top_layer_fraction),
                fmt_sig6(r.histogram_entropy),
            ];
            v.extend(r.histogram.iter().map(|&h| fmt_sig6(h)));
            v
        })
        .collect();
    csv_string(header, body)
}

/// Per-zone summary of a trace as CSV.
pub fn zone_report_csv(noise: &ZoneNoise, network: &Network) -> Result<String> {
    let header = [
        "zone",
        "ambient_db",
        "mean_increase_db",
        "max_increase_db",
        "ticks_with_contribution",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = noise
        .zones
        .iter()
        .zip(&network.zones)
        .map(|(s, z)| {
            vec![
                s.zone.clone(),
                fmt_sig6(z.ambient_db),
                opt(s.mean_db),
                opt(s.max_db),
                s.series.iter().flatten().count().to_string(),
            ]
        })
        .collect();
    csv_string(header, rows)
}

/// Trace as CSV at full precision.
pub fn trace_csv(trace: &[TraceRow]) -> Result<String> {
    let enc = |e: csv::Error| Error::Contract(format!("csv encoding: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in trace {
        w.serialize(row).map_err(enc)?;
    }
    if trace.is_empty() {
        w.write_record(TRACE_COLUMNS).map_err(enc)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const TRACE_COLUMNS: [&str; 9] = [
    "t",
    "id",
    "x",
    "y",
    "z_ft",
    "z_target_ft",
    "action",
    "b_changing",
    "link",
];

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    write_atomic(path, trace_csv(trace)?.as_bytes())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let text = read_to_string(path)?;
    parse_trace(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(|e| Error::parse("trace", e.to_string())))
        .collect()
}
