//! Clipped-surrogate PPO loss, its exact gradient, and the Adam update.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{PolicyParams, Tape};
use super::rollout::RolloutBatch;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::mdp::{Action, ActionMask, Features};

/// One training example, borrowed from a rollout batch.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a Features,
    pub mask: &'a ActionMask,
    pub action: Action,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub return_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl From<&TrainConfig> for LossCoefficients {
    fn from(c: &TrainConfig) -> Self {
        LossCoefficients {
            clip_eps: c.clip_eps,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Mean PPO loss over `samples`; when `grad` is given, adds its gradient.
///
/// `loss = -min(r·A, clip(r, 1±ε)·A) + c_v·(V - R)² - c_e·H`
pub fn loss_and_grad(
    params: &PolicyParams,
    samples: &[Sample<'_>],
    coef: &LossCoefficients,
    mut grad: Option<&mut [f64]>,
) -> Result<LossStats> {
    let mut stats = LossStats::default();
    if samples.is_empty() {
        return Ok(stats);
    }
    let inv_n = 1.0 / samples.len() as f64;
    let mut tape = Tape::default();
    let mut clipped = 0usize;
    for s in samples {
        let out = params.forward_tape(s.features, s.mask, &mut tape)?;
        let a = s.action.index();
        if !s.mask[a] {
            return Err(Error::Contract(format!("sample action {a} is masked")));
        }
        let ratio = (out.log_probs[a] - s.old_log_prob).exp();
        let lo = 1.0 - coef.clip_eps;
        let hi = 1.0 + coef.clip_eps;
        let unclipped = ratio * s.advantage;
        let clipped_obj = ratio.clamp(lo, hi) * s.advantage;
        let surrogate = unclipped.min(clipped_obj);
        // d(surrogate)/d(ratio): zero only where the clipped branch binds.
        let active = unclipped <= clipped_obj || (lo..=hi).contains(&ratio);
        if !active {
            clipped += 1;
        }
        let entropy = out.entropy();
        let verr = out.value - s.return_target;

        stats.policy -= surrogate * inv_n;
        stats.value += verr * verr * inv_n;
        stats.entropy += entropy * inv_n;

        if let Some(g) = grad.as_deref_mut() {
            let d_logp = if active { -s.advantage * ratio } else { 0.0 };
            let mut d_logits = [0.0; 3];
            for k in 0..3 {
                if !s.mask[k] {
                    continue;
                }
                let p = out.probs[k];
                let ind = if k == a { 1.0 } else { 0.0 };
                let mut d = d_logp * (ind - p);
                if p > 0.0 {
                    // dH/dlogit_k = -p_k (log p_k + H)
                    d += coef.entropy_coef * p * (out.log_probs[k] + entropy);
                }
                d_logits[k] = d * inv_n;
            }
            let d_value = 2.0 * coef.value_coef * verr * inv_n;
            params.backward(&tape, &d_logits, d_value, g);
        }
    }
    stats.total = stats.policy + coef.value_coef * stats.value - coef.entropy_coef * stats.entropy;
    stats.clip_fraction = clipped as f64 * inv_n;
    if !stats.total.is_finite() {
        return Err(Error::NonFinite(format!("{stats:?}")));
    }
    Ok(stats)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..weights.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            weights[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Runs the configured epochs of minibatch PPO over `batch`.
///
/// On a non-finite loss the parameters are restored and the error reports
/// the offending statistics.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    adam: &mut Adam,
    batch: &RolloutBatch,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<LossStats> {
    if batch.is_empty() {
        return Err(Error::Contract("PPO update on an empty batch".into()));
    }
    let samples = batch.samples();
    let coef = LossCoefficients::from(config);
    let backup = (params.clone(), adam.clone());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mb = config.minibatch_size.max(1);
    let mut grad = vec![0.0; params.len()];
    let mut last = LossStats::default();
    let mut mini: Vec<Sample<'_>> = Vec::with_capacity(mb);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(mb) {
            mini.clear();
            mini.extend(chunk.iter().map(|&i| samples[i]));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let stats = match loss_and_grad(params, &mini, &coef, Some(&mut grad)) {
                Ok(s) => s,
                Err(e) => {
                    (*params, *adam) = backup;
                    return Err(match e {
                        Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
                        other => other,
                    });
                }
            };
            if grad.iter().any(|g| !g.is_finite()) {
                (*params, *adam) = backup;
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}: gradient, {stats:?}"
                )));
            }
            clip_grad_norm(&mut grad, config.max_grad_norm);
            adam.step(&mut params.weights, &grad);
            last = stats;
        }
    }
    Ok(last)
}
