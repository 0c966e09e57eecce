//! Experience collection and generalized advantage estimation.

use rand::Rng;

use super::policy::{PolicyOutput, PolicyParams};
use super::ppo::Sample;
use crate::env::{AgentView, Controller, Decision, Environment, EpisodeRecord};
use crate::error::Result;
use crate::mdp::{Action, ActionMask, Features, Observation};

/// Categorical sample from a masked distribution. Returns the action and its log-probability.
pub fn sample_action<R: Rng + ?Sized>(dist: &PolicyOutput, rng: &mut R) -> (Action, f64) {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for k in 0..3 {
        if dist.probs[k] <= 0.0 {
            continue;
        }
        acc += dist.probs[k];
        last = Some(k);
        if u < acc {
            return (Action::ALL[k], dist.log_probs[k]);
        }
    }
    // Rounding left `acc` just under 1.
    let k = last.expect("distribution has support");
    (Action::ALL[k], dist.log_probs[k])
}

/// Most likely action, lowest index on ties.
pub fn greedy_action(dist: &PolicyOutput) -> (Action, f64) {
    let mut best = 0;
    for k in 1..3 {
        if dist.probs[k] > dist.probs[best] {
            best = k;
        }
    }
    (Action::ALL[best], dist.log_probs[best])
}

/// Drives every aircraft from one shared parameter set.
pub struct PolicyController<'a, R> {
    pub params: &'a PolicyParams,
    /// `None` selects greedy actions.
    pub rng: Option<&'a mut R>,
}

impl<R: Rng> Controller for PolicyController<'_, R> {
    fn decide(&mut self, view: &AgentView) -> Result<Decision> {
        let out = self.params.forward(&view.features, &view.mask)?;
        let (action, log_prob) = match self.rng.as_deref_mut() {
            Some(rng) => sample_action(&out, rng),
            None => greedy_action(&out),
        };
        Ok(Decision {
            action,
            log_prob,
            value: out.value,
        })
    }

    fn value(&mut self, view: &AgentView) -> Result<f64> {
        Ok(self.params.forward(&view.features, &view.mask)?.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Observation,
    pub features: Features,
    pub mask: ActionMask,
    pub action: Action,
    /// Under the masked distribution the action was sampled from.
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// Set on the final transition of an aircraft that reached its destination.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentBatch {
    pub flight: usize,
    /// Time ordered.
    pub transitions: Vec<Transition>,
    pub bootstrap_value: f64,
}

/// Transitions of one rollout, grouped per aircraft, plus advantage targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub agents: Vec<AgentBatch>,
    /// Flattened in agent-major order, normalized.
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn from_episode(record: &EpisodeRecord) -> Self {
        let agents = record
            .trajectories
            .iter()
            .filter(|t| !t.steps.is_empty())
            .map(|t| {
                let last = t.steps.len() - 1;
                AgentBatch {
                    flight: t.flight,
                    bootstrap_value: if t.done { 0.0 } else { t.bootstrap_value },
                    transitions: t
                        .steps
                        .iter()
                        .enumerate()
                        .map(|(i, s)| Transition {
                            observation: s.view.observation.clone(),
                            features: s.view.features.clone(),
                            mask: s.view.mask,
                            action: s.decision.action,
                            log_prob: s.decision.log_prob,
                            reward: s.reward,
                            value: s.decision.value,
                            done: t.done && i == last,
                        })
                        .collect(),
                }
            })
            .collect();
        RolloutBatch {
            agents,
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.agents.iter().map(|a| a.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.agents.iter().flat_map(|a| a.transitions.iter())
    }

    /// Training samples; requires [`compute_advantages`] to have run.
    pub fn samples(&self) -> Vec<Sample<'_>> {
        assert_eq!(self.advantages.len(), self.len(), "advantages not computed");
        self.transitions()
            .zip(self.advantages.iter().zip(&self.returns))
            .map(|(t, (&advantage, &return_target))| Sample {
                features: &t.features,
                mask: &t.mask,
                action: t.action,
                old_log_prob: t.log_prob,
                advantage,
                return_target,
            })
            .collect()
    }
}

/// Runs one episode with stochastic actions from the shared parameters.
pub fn collect_rollout<R: Rng>(
    env: &Environment,
    params: &PolicyParams,
    horizon: Option<u64>,
    rng: &mut R,
) -> Result<(RolloutBatch, EpisodeRecord)> {
    let mut controller = PolicyController {
        params,
        rng: Some(rng),
    };
    let record = env.run(&mut controller, horizon)?;
    Ok((RolloutBatch::from_episode(&record), record))
}

/// GAE over one time-ordered trajectory. Returns `(advantages, returns)`.
///
/// `done` marks the last reward as terminal; otherwise `bootstrap` values
/// the state after it.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    done: bool,
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n {
            values[t + 1]
        } else if done {
            0.0
        } else {
            bootstrap
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Per-agent GAE, then advantages normalized to zero mean and unit variance over the batch.
pub fn compute_advantages(batch: &mut RolloutBatch, gamma: f64, lambda: f64) {
    let mut advantages = Vec::with_capacity(batch.len());
    let mut returns = Vec::with_capacity(batch.len());
    for a in &batch.agents {
        let rewards: Vec<f64> = a.transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = a.transitions.iter().map(|t| t.value).collect();
        let done = a.transitions.last().is_some_and(|t| t.done);
        let (adv, ret) = gae(&rewards, &values, done, a.bootstrap_value, gamma, lambda);
        advantages.extend(adv);
        returns.extend(ret);
    }
    normalize(&mut advantages);
    batch.advantages = advantages;
    batch.returns = returns;
}

fn normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in x.iter_mut() {
        *v = (*v - mean) / (std + 1e-8);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: [f64; 3]) -> PolicyOutput {
        PolicyOutput {
            logits: [0.0; 3],
            probs: p,
            log_probs: p.map(|v| v.ln()),
            value: 0.0,
        }
    }

    #[test]
    fn point_mass_samples_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(
                sample_action(&dist([1.0, 0.0, 0.0]), &mut rng),
                (Action::Hold, 0.0)
            );
        }
    }

    #[test]
    fn seeded_sampling_reproducible() {
        let d = dist([0.2, 0.3, 0.5]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_action(&d, &mut rng).0)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn greedy_ties_pick_lowest_index() {
        assert_eq!(greedy_action(&dist([0.4, 0.4, 0.2])).0, Action::Hold);
        assert_eq!(greedy_action(&dist([0.2, 0.4, 0.4])).0, Action::Descend);
        assert_eq!(greedy_action(&dist([0.1, 0.2, 0.7])).0, Action::Climb);
    }

    #[test]
    fn one_step_gae() {
        let (adv, ret) = gae(&[0.7], &[0.2], true, 99.0, 0.99, 0.95);
        assert!((adv[0] - 0.5).abs() < 1e-15);
        assert!((ret[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_rewards_zero_values() {
        let (adv, _) = gae(&[0.0; 5], &[0.0; 5], false, 0.0, 0.99, 0.95);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn telescoping_gae_is_reward_to_go_minus_value() {
        // gamma = lambda = 1: A_t = sum_{k>=t} r_k - V_t.
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, -0.1, 0.4];
        let (adv, _) = gae(&r, &v, true, 0.0, 1.0, 1.0);
        let expect = [-0.5 - 0.3, -1.5 + 0.1, 0.5 - 0.4];
        for (a, e) in adv.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{adv:?}");
        }
    }

    #[test]
    fn truncated_trajectory_bootstraps() {
        let (adv, _) = gae(&[1.0], &[0.0], false, 2.0, 0.5, 1.0);
        assert!((adv[0] - 2.0).abs() < 1e-15);
    }
}
