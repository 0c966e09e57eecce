//! Per-agent observations, the action alphabet, masks and the blended reward.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::AltitudeLayers;
use crate::noise::NpdModel;
use crate::sim::{AircraftState, World, FT_TO_M};

/// Nearest intruders kept in an observation.
pub const MAX_INTRUDERS: usize = 10;

/// Own-state feature width: z, changing, z_target, one-hot last action.
pub const OWN_DIM: usize = 6;
/// Intruder feature width: z_rel, distance, one-hot last action.
pub const INTRUDER_DIM: usize = 5;

/// Vertical advisory. Serialized as 0 (hold), 1 (descend), 2 (climb).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    Hold = 0,
    Descend = 1,
    Climb = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Hold, Action::Descend, Action::Climb];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;
    fn try_from(v: u8) -> Result<Action> {
        Action::from_index(v as usize).ok_or_else(|| Error::parse("action", format!("code {v}")))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// Allowed actions in `(hold, descend, climb)` order.
pub type ActionMask = [bool; 3];

pub fn action_mask(state: &AircraftState, layers: &AltitudeLayers) -> ActionMask {
    if state.changing {
        return [true, false, false];
    }
    let at = layers.index_of(state.z_target_ft);
    let bottom = at == Some(0);
    let top = at == Some(layers.top());
    [true, !bottom, !top]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwnObservation {
    pub z_ft: f64,
    pub changing: bool,
    pub z_target_ft: f64,
    pub last_action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntruderObservation {
    /// Intruder altitude minus own altitude, ft.
    pub z_rel_ft: f64,
    /// 3-D distance, m.
    pub distance_m: f64,
    pub last_action: Action,
}

/// Raw-unit observation; [`FeatureScale`] turns it into network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub own: OwnObservation,
    /// Nearest first.
    pub intruders: Vec<IntruderObservation>,
}

/// Normalization constants for network features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub z_min_ft: f64,
    pub z_span_ft: f64,
    pub d_comm_m: f64,
}

impl FeatureScale {
    pub fn new(layers: &AltitudeLayers, d_comm_m: f64) -> Self {
        FeatureScale {
            z_min_ft: layers.min(),
            z_span_ft: layers.span(),
            d_comm_m,
        }
    }

    fn span(&self) -> f64 {
        if self.z_span_ft > 0.0 {
            self.z_span_ft
        } else {
            1.0
        }
    }

    pub fn own(&self, o: &OwnObservation) -> [f64; OWN_DIM] {
        let mut f = [0.0; OWN_DIM];
        f[0] = ((o.z_ft - self.z_min_ft) / self.span()).clamp(0.0, 1.0);
        f[1] = if o.changing { 1.0 } else { 0.0 };
        f[2] = ((o.z_target_ft - self.z_min_ft) / self.span()).clamp(0.0, 1.0);
        f[3 + o.last_action.index()] = 1.0;
        f
    }

    pub fn intruder(&self, i: &IntruderObservation) -> [f64; INTRUDER_DIM] {
        let mut f = [0.0; INTRUDER_DIM];
        f[0] = (i.z_rel_ft / self.span()).clamp(-1.0, 1.0);
        f[1] = (i.distance_m / self.d_comm_m).clamp(0.0, 1.0);
        f[2 + i.last_action.index()] = 1.0;
        f
    }

    pub fn features(&self, obs: &Observation) -> Features {
        Features {
            own: self.own(&obs.own),
            intruders: obs.intruders.iter().map(|i| self.intruder(i)).collect(),
        }
    }
}

/// Normalized network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub own: [f64; OWN_DIM],
    pub intruders: Vec<[f64; INTRUDER_DIM]>,
}

/// Builds the observation of an airborne aircraft from route-filtered neighbors.
pub fn observe(world: &World, flight: usize, max_intruders: usize) -> Observation {
    let me = &world.aircraft()[flight];
    let intruders = world
        .neighbors(flight, world.config().d_comm)
        .into_iter()
        .take(max_intruders)
        .map(|j| {
            let o = &world.aircraft()[j];
            IntruderObservation {
                z_rel_ft: o.z_ft - me.z_ft,
                distance_m: me.distance_3d(o),
                last_action: o.last_action,
            }
        })
        .collect();
    Observation {
        own: OwnObservation {
            z_ft: me.z_ft,
            changing: me.changing,
            z_target_ft: me.z_target_ft,
            last_action: me.last_action,
        },
        intruders,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the noise term; `1 - rho` weights separation.
    pub rho: f64,
    /// Penalty per same-level intruder.
    pub lambda: f64,
    /// Vertical proximity threshold, m.
    pub d_los: f64,
    pub z_min_ft: f64,
    pub z_max_ft: f64,
}

impl RewardConfig {
    pub fn new(rho: f64, layers: &AltitudeLayers, d_los: f64) -> Self {
        RewardConfig {
            rho,
            lambda: 0.1,
            d_los,
            z_min_ft: layers.min(),
            z_max_ft: layers.max(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::validation(
                "rho",
                format!("must lie in [0, 1], got {}", self.rho),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation(
                "lambda",
                "must be finite and non-negative",
            ));
        }
        if !(self.d_los > 0.0) {
            return Err(Error::validation("d_los", "must be positive"));
        }
        if !(self.z_min_ft > 0.0 && self.z_min_ft < self.z_max_ft) {
            return Err(Error::validation("z_min_ft", "need 0 < z_min < z_max"));
        }
        Ok(())
    }
}

/// Reward configuration with the noise normalization extremes resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub config: RewardConfig,
    model: NpdModel,
    n_max_db: f64,
    n_min_db: f64,
}

impl RewardModel {
    pub fn new(config: RewardConfig, model: NpdModel) -> Result<Self> {
        config.validate()?;
        let n_max_db = model.flyover_level(config.z_min_ft)?;
        let n_min_db = model.flyover_level(config.z_max_ft)?;
        if !(n_max_db > n_min_db) {
            return Err(Error::validation(
                "reward noise range",
                format!("level at z_min ({n_max_db}) must exceed level at z_max ({n_min_db})"),
            ));
        }
        Ok(RewardModel {
            config,
            model,
            n_max_db,
            n_min_db,
        })
    }

    pub fn noise_extremes(&self) -> (f64, f64) {
        (self.n_max_db, self.n_min_db)
    }

    pub fn npd(&self) -> &NpdModel {
        &self.model
    }

    /// Normalized noise penalty in `[-1, 0]`; 0 at the top layer.
    pub fn reward_noise(&self, z_ft: f64) -> f64 {
        let level = self
            .model
            .flyover_level(z_ft.clamp(self.config.z_min_ft, self.config.z_max_ft))
            .expect("layer altitudes are positive");
        0.0 - (level - self.n_min_db) / (self.n_max_db - self.n_min_db)
    }

    pub fn reward_separation(&self, obs: &Observation) -> f64 {
        reward_separation(obs, self.config.lambda, self.config.d_los)
    }

    pub fn reward(&self, obs: &Observation) -> f64 {
        reward_total(
            self.reward_noise(obs.own.z_ft),
            self.reward_separation(obs),
            self.config.rho,
        )
    }
}

/// `-min(lambda * #{intruders within d_los vertically}, 1)`.
pub fn reward_separation(obs: &Observation, lambda: f64, d_los: f64) -> f64 {
    let close = obs
        .intruders
        .iter()
        .filter(|i| (i.z_rel_ft * FT_TO_M).abs() < d_los)
        .count();
    0.0 - (lambda * close as f64).min(1.0)
}

pub fn reward_total(r_noise: f64, r_sep: f64, rho: f64) -> f64 {
    rho * r_noise + (1.0 - rho) * r_sep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Phase;

    fn model() -> RewardModel {
        let layers = AltitudeLayers::default();
        RewardModel::new(RewardConfig::new(0.5, &layers, 150.0), NpdModel::default()).unwrap()
    }

    fn intruder(z_rel_ft: f64) -> IntruderObservation {
        IntruderObservation {
            z_rel_ft,
            distance_m: 1000.0,
            last_action: Action::Hold,
        }
    }

    fn obs(intruders: Vec<IntruderObservation>) -> Observation {
        Observation {
            own: OwnObservation {
                z_ft: 2000.0,
                changing: false,
                z_target_ft: 2000.0,
                last_action: Action::Hold,
            },
            intruders,
        }
    }

    #[test]
    fn noise_reward_values() {
        let m = model();
        assert_eq!(m.reward_noise(3000.0), 0.0);
        assert!(m.reward_noise(3000.0).is_sign_positive());
        assert_eq!(m.reward_noise(1000.0), -1.0);
        assert!((m.reward_noise(2000.0) - -0.390).abs() < 0.005);
    }

    #[test]
    fn noise_reward_monotone_on_layers() {
        let m = model();
        let r: Vec<f64> = AltitudeLayers::default()
            .levels()
            .iter()
            .map(|&z| m.reward_noise(z))
            .collect();
        assert!(r.windows(2).all(|w| w[0] < w[1]), "{r:?}");
    }

    #[test]
    fn separation_examples() {
        assert_eq!(reward_separation(&obs(vec![]), 0.1, 150.0), 0.0);
        assert_eq!(
            reward_separation(&obs(vec![intruder(0.0); 4]), 0.1, 150.0),
            -0.4
        );
        assert_eq!(
            reward_separation(&obs(vec![intruder(0.0); 12]), 0.1, 150.0),
            -1.0
        );
    }

    #[test]
    fn adjacent_layer_is_outside_threshold() {
        // 500 ft = 152.4 m > 150 m.
        assert_eq!(
            reward_separation(&obs(vec![intruder(500.0), intruder(-500.0)]), 0.1, 150.0),
            0.0
        );
        assert_eq!(
            reward_separation(&obs(vec![intruder(-490.0)]), 0.1, 150.0),
            -0.1
        );
    }

    #[test]
    fn total_blend() {
        assert_eq!(reward_total(-0.3, -0.7, 0.0), -0.7);
        assert_eq!(reward_total(-0.3, -0.7, 1.0), -0.3);
        assert!((reward_total(-0.390, -0.4, 0.5) - -0.395).abs() < 1e-12);
    }

    #[test]
    fn masks() {
        let layers = AltitudeLayers::default();
        let mut a = crate::sim::AircraftState {
            flight: 0,
            position: crate::network::Point::new(0.0, 0.0),
            z_ft: 2000.0,
            leg: 0,
            along_m: 0.0,
            ground_speed: 67.0,
            vertical_rate: 0.0,
            changing: false,
            z_target_ft: 2000.0,
            last_action: Action::Hold,
            phase: Phase::Enroute,
        };
        assert_eq!(action_mask(&a, &layers), [true, true, true]);
        a.changing = true;
        a.z_target_ft = 2500.0;
        assert_eq!(action_mask(&a, &layers), [true, false, false]);
        a.changing = false;
        a.z_ft = 3000.0;
        a.z_target_ft = 3000.0;
        assert_eq!(action_mask(&a, &layers), [true, true, false]);
        a.z_ft = 1000.0;
        a.z_target_ft = 1000.0;
        assert_eq!(action_mask(&a, &layers), [true, false, true]);
    }

    #[test]
    fn feature_normalization() {
        let scale = FeatureScale::new(&AltitudeLayers::default(), 2500.0);
        let own = OwnObservation {
            z_ft: 1000.0,
            changing: false,
            z_target_ft: 1000.0,
            last_action: Action::Climb,
        };
        assert_eq!(scale.own(&own), [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let f = scale.intruder(&IntruderObservation {
            z_rel_ft: 500.0,
            distance_m: 1000.0,
            last_action: Action::Hold,
        });
        assert_eq!(f[0], 0.25);
        assert_eq!(f[1], 0.4);
    }

    #[test]
    fn action_codes() {
        assert_eq!(serde_json::to_string(&Action::Climb).unwrap(), "2");
        assert_eq!(
            serde_json::from_str::<Action>("1").unwrap(),
            Action::Descend
        );
        assert!(serde_json::from_str::<Action>("3").is_err());
    }
}
