//! Self-describing policy checkpoints.
//!
//! A checkpoint is a JSON document holding the weights together with every
//! configuration that produced them, so evaluation needs no extra flags.
//! Floats are written in shortest round-trip form, so loading restores the
//! weights bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::{Layout, PolicyParams};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::mdp::RewardConfig;
use crate::network::AltitudeLayers;
use crate::sim::SimConfig;
use crate::util::{read_to_string, write_atomic};

pub const FORMAT: &str = "uam-policy";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Training iterations completed.
    pub iteration: u64,
    pub train_config: TrainConfig,
    pub reward_config: RewardConfig,
    pub sim_config: SimConfig,
    pub layers_ft: AltitudeLayers,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(
        params: PolicyParams,
        iteration: u64,
        train_config: TrainConfig,
        reward_config: RewardConfig,
        sim_config: SimConfig,
        layers_ft: AltitudeLayers,
    ) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            iteration,
            train_config,
            reward_config,
            sim_config,
            layers_ft,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e.to_string()))?;
        if ck.format != FORMAT {
            return Err(Error::validation(
                "checkpoint",
                format!("unknown format {:?}", ck.format),
            ));
        }
        if ck.version != VERSION {
            return Err(Error::validation(
                "checkpoint",
                format!("unsupported version {} (expected {VERSION})", ck.version),
            ));
        }
        let expect = Layout::new(ck.params.shape).len();
        if ck.params.weights.len() != expect {
            return Err(Error::validation(
                "checkpoint",
                format!(
                    "{} weights for hidden width {} (expected {expect})",
                    ck.params.weights.len(),
                    ck.params.shape.hidden
                ),
            ));
        }
        if !ck.params.is_finite() {
            return Err(Error::validation("checkpoint", "non-finite weight"));
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    /// Errors unless the checkpoint was trained on `layers`.
    pub fn check_layers(&self, layers: &AltitudeLayers) -> Result<()> {
        if &self.layers_ft != layers {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint layers {:?} ft differ from scenario layers {:?} ft",
                self.layers_ft.levels(),
                layers.levels()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Features;
    use crate::rl::NetShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layers = AltitudeLayers::default();
        Checkpoint::new(
            PolicyParams::init(NetShape { hidden: 4 }, &mut rng),
            3,
            TrainConfig::default(),
            RewardConfig::new(0.5, &layers, 150.0),
            SimConfig::default(),
            layers,
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let f = Features {
            own: [0.3, 1.0, 0.5, 0.0, 1.0, 0.0],
            intruders: vec![[0.25, 0.4, 1.0, 0.0, 0.0]],
        };
        let m = [true, true, false];
        let a = ck.params.forward(&f, &m).unwrap();
        let b = back.params.forward(&f, &m).unwrap();
        assert_eq!(a.logits.map(f64::to_bits), b.logits.map(f64::to_bits));
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn rejects_truncated_weights() {
        let mut ck = sample();
        ck.params.weights.pop();
        assert!(Checkpoint::from_json(&ck.to_json())
            .unwrap_err()
            .is_validation());
    }

    #[test]
    fn layer_mismatch_is_reported() {
        let ck = sample();
        let other = AltitudeLayers::new(vec![1000.0, 2000.0]).unwrap();
        assert!(matches!(
            ck.check_layers(&other),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
