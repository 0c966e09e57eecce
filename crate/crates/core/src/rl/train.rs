//! Collect → advantages → update loop.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::PolicyParams;
use super::ppo::{ppo_update, Adam, LossStats};
use super::rollout::{collect_rollout, compute_advantages};
use super::TrainConfig;
use crate::env::Environment;
use crate::error::Result;
use crate::eval::altitude_histogram;
use crate::util::{fmt_sig6, write_atomic};

/// One row of the training metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// 1-based.
    pub iteration: u64,
    pub mean_return: f64,
    /// LOS events in this iteration's rollout episode.
    pub los_events: f64,
    pub top_layer_fraction: f64,
    pub transitions: usize,
    pub loss: LossStats,
}

impl IterationLog {
    pub const HEADER: [&'static str; 10] = [
        "iteration",
        "mean_return",
        "mean_los",
        "top_layer_fraction",
        "transitions",
        "loss_total",
        "loss_policy",
        "loss_value",
        "entropy",
        "clip_fraction",
    ];

    fn record(&self) -> Vec<String> {
        vec![
            self.iteration.to_string(),
            fmt_sig6(self.mean_return),
            fmt_sig6(self.los_events),
            fmt_sig6(self.top_layer_fraction),
            self.transitions.to_string(),
            fmt_sig6(self.loss.total),
            fmt_sig6(self.loss.policy),
            fmt_sig6(self.loss.value),
            fmt_sig6(self.loss.entropy),
            fmt_sig6(self.loss.clip_fraction),
        ]
    }
}

/// Formats the log as CSV with six significant digits.
pub fn train_log_csv(log: &[IterationLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| crate::Error::Contract(format!("csv encoding: {e}"));
    w.write_record(IterationLog::HEADER).map_err(io)?;
    for row in log {
        w.write_record(row.record()).map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::Error::Contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_train_log(path: &Path, log: &[IterationLog]) -> Result<()> {
    write_atomic(path, train_log_csv(log)?.as_bytes())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<IterationLog>,
}

/// Trains a fresh policy for `config.iterations` iterations.
///
/// All randomness (initial weights, action sampling, minibatch order) comes
/// from one generator seeded with `config.seed`. `on_iteration` sees the
/// parameters after every update, e.g. to write checkpoints.
pub fn train(
    env: &Environment,
    config: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationLog, &PolicyParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = PolicyParams::init(config.shape(), &mut rng);
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let layers = env.fresh_world().layers().clone();
    let mut log = Vec::with_capacity(config.iterations as usize);

    for iteration in 1..=config.iterations {
        let (mut batch, record) = collect_rollout(env, &params, config.horizon, &mut rng)?;
        let loss = if batch.is_empty() {
            LossStats::default()
        } else {
            compute_advantages(&mut batch, config.gamma, config.gae_lambda);
            ppo_update(&mut params, &mut adam, &batch, config, &mut rng)?
        };
        let top_layer_fraction = altitude_histogram(&record.trace, &layers)
            .map(|h| h[layers.top()])
            .unwrap_or(0.0);
        let row = IterationLog {
            iteration,
            mean_return: record.mean_return(),
            los_events: record.los_events.len() as f64,
            top_layer_fraction,
            transitions: batch.len(),
            loss,
        };
        on_iteration(&row, &params)?;
        log.push(row);
    }
    Ok(TrainOutcome { params, log })
}
