//! Multi-agent episode driver shared by training rollouts and evaluation.
//!
//! Every airborne aircraft acts on each decision tick. The reward for a
//! decision is read one decision interval later, from the aircraft's new
//! observation; an aircraft that arrived in between is scored on its final
//! altitude with no separation term.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::{
    action_mask, observe, Action, ActionMask, FeatureScale, Features, Observation, RewardModel,
    MAX_INTRUDERS,
};
use crate::network::Scenario;
use crate::sim::{LosEvent, Phase, SimConfig, World};

/// What a controller sees for one aircraft on a decision tick.
#[derive(Debug, Clone)]
pub struct AgentView {
    pub flight: usize,
    /// Decision tick counter within the episode.
    pub tick: u64,
    pub observation: Observation,
    pub features: Features,
    pub mask: ActionMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
}

/// Chooses actions for aircraft. One controller drives every aircraft.
pub trait Controller {
    fn decide(&mut self, view: &AgentView) -> Result<Decision>;

    /// Value estimate used to bootstrap truncated trajectories.
    fn value(&mut self, _view: &AgentView) -> Result<f64> {
        Ok(0.0)
    }
}

/// Always holds altitude.
#[derive(Debug, Clone, Copy, Default)]
pub struct HoldController;

impl Controller for HoldController {
    fn decide(&mut self, _view: &AgentView) -> Result<Decision> {
        Ok(Decision {
            action: Action::Hold,
            log_prob: 0.0,
            value: 0.0,
        })
    }
}

/// Replays a fixed per-tick action log.
///
/// Aircraft missing from a tick hold, and so do scripted actions the mask forbids.
#[derive(Debug, Clone)]
pub struct ScriptedController {
    pub script: BTreeMap<(u64, usize), Action>,
}

impl Controller for ScriptedController {
    fn decide(&mut self, view: &AgentView) -> Result<Decision> {
        let action = self
            .script
            .get(&(view.tick, view.flight))
            .copied()
            .filter(|a| view.mask[a.index()])
            .unwrap_or(Action::Hold);
        Ok(Decision {
            action,
            log_prob: 0.0,
            value: 0.0,
        })
    }
}

/// One row per airborne aircraft per decision tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub z_ft: f64,
    pub z_target_ft: f64,
    /// Action executed on this tick, encoded 0/1/2.
    pub action: Action,
    pub b_changing: bool,
    pub link: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub view: AgentView,
    pub decision: Decision,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrajectory {
    pub flight: usize,
    pub steps: Vec<Step>,
    /// True when the aircraft reached its destination inside the episode.
    pub done: bool,
    /// Value of the state after the last step; zero when `done`.
    pub bootstrap_value: f64,
}

impl AgentTrajectory {
    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

impl PartialEq for AgentView {
    fn eq(&self, other: &Self) -> bool {
        self.flight == other.flight
            && self.tick == other.tick
            && self.observation == other.observation
            && self.features == other.features
            && self.mask == other.mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub trajectories: Vec<AgentTrajectory>,
    pub trace: Vec<TraceRow>,
    pub los_events: Vec<LosEvent>,
    pub decision_ticks: u64,
    pub end_time_s: f64,
}

impl EpisodeRecord {
    pub fn transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.steps.len()).sum()
    }

    /// Mean undiscounted return over aircraft that acted at least once.
    pub fn mean_return(&self) -> f64 {
        let acted: Vec<f64> = self
            .trajectories
            .iter()
            .filter(|t| !t.steps.is_empty())
            .map(|t| t.episode_return())
            .collect();
        if acted.is_empty() {
            0.0
        } else {
            acted.iter().sum::<f64>() / acted.len() as f64
        }
    }
}

/// Simulation plus reward definition: everything needed to run episodes.
#[derive(Debug, Clone)]
pub struct Environment {
    template: World,
    pub reward: RewardModel,
    pub scale: FeatureScale,
    pub max_intruders: usize,
}

impl Environment {
    pub fn new(scenario: Arc<Scenario>, sim: SimConfig, reward: RewardModel) -> Result<Self> {
        let template = World::new(scenario, sim)?;
        let scale = FeatureScale::new(template.layers(), sim.d_comm);
        Ok(Environment {
            template,
            reward,
            scale,
            max_intruders: MAX_INTRUDERS,
        })
    }

    pub fn sim_config(&self) -> &SimConfig {
        self.template.config()
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        self.template.scenario()
    }

    pub fn fresh_world(&self) -> World {
        self.template.reset()
    }

    pub fn view(&self, world: &World, flight: usize, tick: u64) -> AgentView {
        let observation = observe(world, flight, self.max_intruders);
        let features = self.scale.features(&observation);
        AgentView {
            flight,
            tick,
            mask: action_mask(&world.aircraft()[flight], world.layers()),
            observation,
            features,
        }
    }

    /// Runs one episode, stopping after `horizon` decision ticks if given.
    pub fn run(
        &self,
        controller: &mut dyn Controller,
        horizon: Option<u64>,
    ) -> Result<EpisodeRecord> {
        let mut world = self.fresh_world();
        let n = world.aircraft().len();
        let scenario = world.scenario().clone();
        let net = scenario.network.clone();
        let mut trajectories: Vec<AgentTrajectory> = (0..n)
            .map(|flight| AgentTrajectory {
                flight,
                steps: Vec::new(),
                done: false,
                bootstrap_value: 0.0,
            })
            .collect();
        let mut trace = Vec::new();
        // Aircraft whose last step still waits for its reward.
        let mut open: Vec<usize> = Vec::new();
        let mut ticks = 0u64;
        let spd = world.config().steps_per_decision();

        loop {
            if world.is_terminal() || horizon.is_some_and(|h| ticks >= h) {
                break;
            }
            world.spawn_due();
            let views: BTreeMap<usize, AgentView> = world
                .enroute()
                .map(|a| a.flight)
                .collect::<Vec<_>>()
                .into_iter()
                .map(|f| (f, self.view(&world, f, ticks)))
                .collect();
            self.settle(&world, &views, &mut open, &mut trajectories);

            let mut actions = vec![None; n];
            for (&f, view) in &views {
                let decision = controller.decide(view)?;
                debug_assert!(view.mask[decision.action.index()], "masked action chosen");
                actions[f] = Some(decision.action);
                trajectories[f].steps.push(Step {
                    view: view.clone(),
                    decision,
                    reward: 0.0,
                });
                open.push(f);
            }

            let before: Vec<(usize, f64, f64, f64, f64, bool, usize)> = world
                .enroute()
                .map(|a| {
                    (
                        a.flight,
                        a.position.x,
                        a.position.y,
                        a.z_ft,
                        a.z_target_ft,
                        a.changing,
                        world.current_link(a.flight),
                    )
                })
                .collect();
            let t = world.time();
            let events = world.step(&actions)?;
            let executed: BTreeMap<usize, Action> = events.executed.into_iter().collect();
            for (f, x, y, z, zt, changing, link) in before {
                trace.push(TraceRow {
                    t,
                    id: scenario.flights[f].id.clone(),
                    x,
                    y,
                    z_ft: z,
                    z_target_ft: zt,
                    action: executed.get(&f).copied().unwrap_or(Action::Hold),
                    b_changing: changing,
                    link: net.links[link].id.clone(),
                });
            }
            for _ in 1..spd {
                if world.is_terminal() {
                    break;
                }
                world.step(&[])?;
            }
            ticks += 1;
        }

        // Close out the last decision of every aircraft.
        let views: BTreeMap<usize, AgentView> = open
            .iter()
            .filter(|&&f| world.aircraft()[f].is_enroute())
            .map(|&f| (f, self.view(&world, f, ticks)))
            .collect();
        let truncated: Vec<usize> = views.keys().copied().collect();
        self.settle(&world, &views, &mut open, &mut trajectories);
        for f in truncated {
            trajectories[f].bootstrap_value = controller.value(&views[&f])?;
            trajectories[f].done = false;
        }

        Ok(EpisodeRecord {
            trajectories,
            trace,
            los_events: world.los_events(),
            decision_ticks: ticks,
            end_time_s: world.time(),
        })
    }

    /// Assigns rewards to pending steps now that their outcome is visible.
    fn settle(
        &self,
        world: &World,
        views: &BTreeMap<usize, AgentView>,
        open: &mut Vec<usize>,
        trajectories: &mut [AgentTrajectory],
    ) {
        for f in open.drain(..) {
            let a = &world.aircraft()[f];
            let traj = &mut trajectories[f];
            let step = traj.steps.last_mut().expect("open step exists");
            match a.phase {
                Phase::Arrived => {
                    step.reward = self.reward.config.rho * self.reward.reward_noise(a.z_ft);
                    traj.done = true;
                }
                _ => {
                    let view = &views[&f];
                    step.reward = self.reward.reward(&view.observation);
                }
            }
        }
    }
}
