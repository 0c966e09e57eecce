//! Urban-air-mobility airspace simulation with noise-aware altitude control.
//!
//! The crate is split along the data flow of a training run:
//!
//! - [`network`]: vertiports, directed corridor links, altitude layers, noise
//!   zones and the scenario file format.
//! - [`noise`]: NPD regression curves, curve fitting and cumulative zone noise.
//! - [`sim`]: the discrete-time kinematic world and loss-of-separation events.
//! - [`mdp`]: observations, the action alphabet, action masks and rewards.
//! - [`env`]: the multi-agent episode driver shared by training and evaluation.
//! - [`rl`]: the attention policy, rollouts, advantages and PPO updates.
//! - [`eval`]: episode metrics, the tradeoff sweep and metric export.

pub mod env;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod network;
pub mod noise;
pub mod rl;
pub mod sim;
pub mod util;

pub use error::{Error, Result};
