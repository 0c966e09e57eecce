//! Shared attention policy trained with PPO.
//!
//! One iteration is one full-episode rollout in which every airborne aircraft
//! acts from the same parameters, followed by one PPO update over all of the
//! collected transitions.

pub mod checkpoint;
pub mod policy;
pub mod ppo;
pub mod rollout;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use policy::{NetShape, PolicyOutput, PolicyParams};
pub use ppo::{loss_and_grad, ppo_update, Adam, LossCoefficients, LossStats, Sample};
pub use rollout::{
    collect_rollout, compute_advantages, gae, greedy_action, sample_action, PolicyController,
    RolloutBatch, Transition,
};
pub use train::{train, IterationLog, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Decision ticks per rollout; `None` runs the full episode.
    pub horizon: Option<u64>,
    pub iterations: u64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global gradient-norm clip; 0 disables.
    pub max_grad_norm: f64,
    /// Width of every hidden layer.
    pub hidden: usize,
    pub seed: u64,
    /// Save a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch_size: 64,
            horizon: None,
            iterations: 100,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: 64,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::validation(
                    name,
                    format!("must lie in [0, 1], got {v}"),
                ))
            }
        };
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return Err(Error::validation("clip_eps", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be finite and non-negative"));
            }
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::validation("minibatch_size", "must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::validation("hidden", "must be at least 1"));
        }
        if self.horizon == Some(0) {
            return Err(Error::validation("horizon", "must be at least 1 tick"));
        }
        Ok(())
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            hidden: self.hidden,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_gamma_and_eps() {
        let c = TrainConfig {
            gamma: 1.5,
            ..TrainConfig::default()
        };
        assert!(c.validate().unwrap_err().is_validation());
        let c = TrainConfig {
            clip_eps: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"iterations": 7}"#).unwrap();
        assert_eq!(c.iterations, 7);
        assert_eq!(c.gamma, 0.99);
    }
}
