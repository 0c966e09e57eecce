//! Discrete-time point-mass world.
//!
//! Aircraft fly their frozen route at constant ground speed and move between
//! altitude layers at a fixed vertical rate. A commanded layer change must
//! complete before another one is accepted. Loss of separation is checked on
//! every physics step over all airborne pairs.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Action;
use crate::network::{route_intersections, AltitudeLayers, Point, RouteRelations, Scenario};

pub const FT_TO_M: f64 = 0.3048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Physics step, seconds.
    pub dt: f64,
    /// Seconds between policy decisions; a whole multiple of `dt`.
    pub decision_interval: f64,
    /// Ground speed, m/s.
    pub cruise_speed: f64,
    /// Vertical rate, ft/min.
    pub climb_rate: f64,
    /// Communication range for neighbor detection, m.
    pub d_comm: f64,
    /// Loss-of-separation distance, m.
    pub d_los: f64,
    pub max_episode_time: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0,
            decision_interval: 10.0,
            cruise_speed: 67.0,
            climb_rate: 500.0,
            d_comm: 2500.0,
            d_los: 150.0,
            max_episode_time: 7200.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("dt", self.dt),
            ("decision_interval", self.decision_interval),
            ("cruise_speed", self.cruise_speed),
            ("climb_rate", self.climb_rate),
            ("d_comm", self.d_comm),
            ("d_los", self.d_los),
            ("max_episode_time", self.max_episode_time),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(
                    name,
                    format!("must be positive, got {v}"),
                ));
            }
        }
        let ratio = self.decision_interval / self.dt;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::validation(
                "decision_interval",
                "must be a whole multiple of dt",
            ));
        }
        Ok(())
    }

    pub fn steps_per_decision(&self) -> u64 {
        (self.decision_interval / self.dt).round() as u64
    }

    pub fn climb_rate_fps(&self) -> f64 {
        self.climb_rate / 60.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Pending,
    Enroute,
    Arrived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AircraftState {
    /// Index into the scenario's flight list.
    pub flight: usize,
    pub position: Point,
    pub z_ft: f64,
    /// Index into the flight's route links.
    pub leg: usize,
    /// Distance flown along the current link, m.
    pub along_m: f64,
    pub ground_speed: f64,
    /// Signed, ft/s; zero when level.
    pub vertical_rate: f64,
    pub changing: bool,
    pub z_target_ft: f64,
    pub last_action: Action,
    pub phase: Phase,
}

impl AircraftState {
    fn pending(flight: usize) -> Self {
        AircraftState {
            flight,
            position: Point::new(0.0, 0.0),
            z_ft: 0.0,
            leg: 0,
            along_m: 0.0,
            ground_speed: 0.0,
            vertical_rate: 0.0,
            changing: false,
            z_target_ft: 0.0,
            last_action: Action::Hold,
            phase: Phase::Pending,
        }
    }

    pub fn is_enroute(&self) -> bool {
        self.phase == Phase::Enroute
    }

    pub fn z_m(&self) -> f64 {
        self.z_ft * FT_TO_M
    }

    /// Straight-line distance in meters, altitude converted from feet.
    pub fn distance_3d(&self, other: &AircraftState) -> f64 {
        let dz = self.z_m() - other.z_m();
        self.position.distance(other.position).hypot(dz)
    }
}

/// Applies a vertical command under the completion lock and layer bounds.
///
/// Returns the action actually executed, which is also stored as `last_action`.
pub fn apply_altitude_command(
    state: &mut AircraftState,
    action: Action,
    layers: &AltitudeLayers,
) -> Action {
    let executed = if state.changing {
        Action::Hold
    } else {
        let current = layers
            .index_of(state.z_target_ft)
            .expect("level aircraft sits on a layer");
        let next = match action {
            Action::Hold => None,
            Action::Climb if current < layers.top() => Some(current + 1),
            Action::Descend if current > 0 => Some(current - 1),
            _ => None,
        };
        match next {
            Some(i) => {
                state.z_target_ft = layers.level(i);
                state.changing = true;
                action
            }
            None => Action::Hold,
        }
    };
    state.last_action = executed;
    executed
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LosEvent {
    /// Flight indices, `a < b`.
    pub a: usize,
    pub b: usize,
    pub onset_s: f64,
    pub duration_s: f64,
    pub min_distance_m: f64,
}

/// One pairwise violation observed on a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub a: usize,
    pub b: usize,
    pub distance_m: f64,
}

#[derive(Debug, Clone, Default)]
struct LosTracker {
    active: BTreeMap<(usize, usize), LosEvent>,
    closed: Vec<LosEvent>,
}

impl LosTracker {
    fn update(&mut self, t: f64, dt: f64, current: &[Violation]) -> Vec<LosEvent> {
        let mut onsets = Vec::new();
        let mut still = BTreeMap::new();
        for v in current {
            let key = (v.a, v.b);
            let ev = match self.active.remove(&key) {
                Some(mut ev) => {
                    ev.duration_s += dt;
                    ev.min_distance_m = ev.min_distance_m.min(v.distance_m);
                    ev
                }
                None => {
                    let ev = LosEvent {
                        a: v.a,
                        b: v.b,
                        onset_s: t,
                        duration_s: dt,
                        min_distance_m: v.distance_m,
                    };
                    onsets.push(ev);
                    ev
                }
            };
            still.insert(key, ev);
        }
        self.closed
            .extend(std::mem::take(&mut self.active).into_values());
        self.active = still;
        onsets
    }

    fn all_events(&self) -> Vec<LosEvent> {
        let mut all: Vec<LosEvent> = self
            .closed
            .iter()
            .chain(self.active.values())
            .copied()
            .collect();
        all.sort_by(|x, y| {
            x.onset_s
                .total_cmp(&y.onset_s)
                .then(x.a.cmp(&y.a))
                .then(x.b.cmp(&y.b))
        });
        all
    }
}

/// What happened during one physics step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    pub spawned: Vec<usize>,
    /// Executed action per aircraft, decision ticks only.
    pub executed: Vec<(usize, Action)>,
    pub arrived: Vec<usize>,
    /// LOS events that began on this step.
    pub los_onsets: Vec<LosEvent>,
}

#[derive(Debug, Clone)]
pub struct World {
    scenario: Arc<Scenario>,
    config: SimConfig,
    relations: Arc<RouteRelations>,
    route_of: Arc<Vec<usize>>,
    aircraft: Vec<AircraftState>,
    step_index: u64,
    los: LosTracker,
}

impl World {
    pub fn new(scenario: Arc<Scenario>, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let (routes, route_of) = scenario.distinct_routes();
        let relations = route_intersections(&scenario.network, &routes);
        Ok(Self::with_relations(
            scenario,
            config,
            Arc::new(relations),
            Arc::new(route_of),
        ))
    }

    /// Builds a world reusing precomputed route relations.
    pub fn with_relations(
        scenario: Arc<Scenario>,
        config: SimConfig,
        relations: Arc<RouteRelations>,
        route_of: Arc<Vec<usize>>,
    ) -> Self {
        let aircraft = (0..scenario.flights.len())
            .map(AircraftState::pending)
            .collect();
        World {
            scenario,
            config,
            relations,
            route_of,
            aircraft,
            step_index: 0,
            los: LosTracker::default(),
        }
    }

    /// A fresh world over the same scenario and relations.
    pub fn reset(&self) -> World {
        World::with_relations(
            self.scenario.clone(),
            self.config,
            self.relations.clone(),
            self.route_of.clone(),
        )
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn layers(&self) -> &AltitudeLayers {
        &self.scenario.network.layers
    }

    pub fn relations(&self) -> &RouteRelations {
        &self.relations
    }

    pub fn route_index(&self, flight: usize) -> usize {
        self.route_of[flight]
    }

    pub fn aircraft(&self) -> &[AircraftState] {
        &self.aircraft
    }

    pub fn aircraft_mut(&mut self, flight: usize) -> &mut AircraftState {
        &mut self.aircraft[flight]
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.config.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn is_decision_tick(&self) -> bool {
        self.step_index.is_multiple_of(self.config.steps_per_decision())
    }

    pub fn enroute(&self) -> impl Iterator<Item = &AircraftState> + '_ {
        self.aircraft.iter().filter(|a| a.is_enroute())
    }

    /// Link index the aircraft is currently flying.
    pub fn current_link(&self, flight: usize) -> usize {
        let a = &self.aircraft[flight];
        let links = &self.scenario.flights[flight].route.links;
        links[a.leg.min(links.len() - 1)]
    }

    pub fn is_terminal(&self) -> bool {
        self.aircraft.iter().all(|a| a.phase == Phase::Arrived)
            || self.time() >= self.config.max_episode_time - 1e-9
    }

    /// Moves due `Pending` flights to `Enroute` at their origin on the lowest layer.
    pub fn spawn_due(&mut self) -> Vec<usize> {
        let t = self.time();
        let z0 = self.layers().min();
        let mut spawned = Vec::new();
        for (i, a) in self.aircraft.iter_mut().enumerate() {
            let flight = &self.scenario.flights[i];
            if a.phase != Phase::Pending || flight.departure_s > t + 1e-9 {
                continue;
            }
            a.phase = Phase::Enroute;
            a.position = self.scenario.network.vertiports[flight.origin].position;
            a.z_ft = z0;
            a.z_target_ft = z0;
            a.changing = false;
            a.vertical_rate = 0.0;
            a.leg = 0;
            a.along_m = 0.0;
            a.ground_speed = self.config.cruise_speed;
            a.last_action = Action::Hold;
            spawned.push(i);
        }
        spawned
    }

    /// Advances every airborne aircraft by `dt` seconds. Returns arrivals.
    pub fn advance_kinematics(&mut self, dt: f64) -> Vec<usize> {
        let net = &self.scenario.network;
        let vstep = self.config.climb_rate_fps() * dt;
        let rate = self.config.climb_rate_fps();
        let mut arrived = Vec::new();
        for (i, a) in self.aircraft.iter_mut().enumerate() {
            if !a.is_enroute() {
                continue;
            }
            if a.changing {
                let diff = a.z_target_ft - a.z_ft;
                if diff.abs() <= vstep {
                    a.z_ft = a.z_target_ft;
                    a.changing = false;
                    a.vertical_rate = 0.0;
                } else {
                    a.z_ft += vstep.copysign(diff);
                    a.vertical_rate = rate.copysign(diff);
                }
            }

            let links = &self.scenario.flights[i].route.links;
            let mut remaining = a.ground_speed * dt;
            loop {
                let link = &net.links[links[a.leg]];
                let left = link.length_m - a.along_m;
                if remaining < left {
                    a.along_m += remaining;
                    let (p, q) = net.link_endpoints(links[a.leg]);
                    a.position = p.lerp(q, a.along_m / link.length_m);
                    break;
                }
                remaining -= left;
                if a.leg + 1 == links.len() {
                    a.along_m = link.length_m;
                    a.position = net.vertiports[link.to].position;
                    a.phase = Phase::Arrived;
                    a.vertical_rate = 0.0;
                    arrived.push(i);
                    break;
                }
                a.leg += 1;
                a.along_m = 0.0;
            }
        }
        arrived
    }

    /// Airborne aircraft within `d_comm` (planar) on related routes, nearest first in 3-D.
    pub fn neighbors(&self, flight: usize, d_comm: f64) -> Vec<usize> {
        let me = &self.aircraft[flight];
        if !me.is_enroute() {
            return Vec::new();
        }
        let my_route = self.route_of[flight];
        let mut out: Vec<(f64, usize)> = self
            .aircraft
            .iter()
            .enumerate()
            .filter(|(j, o)| {
                *j != flight
                    && o.is_enroute()
                    && me.position.distance(o.position) <= d_comm
                    && self.relations.related(my_route, self.route_of[*j])
            })
            .map(|(j, o)| (me.distance_3d(o), j))
            .collect();
        out.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        out.into_iter().map(|(_, j)| j).collect()
    }

    /// All airborne pairs closer than `d_los` in 3-D, sorted by pair.
    ///
    /// Uses a planar grid with `d_los` cells as a broad phase.
    pub fn detect_los(&self, d_los: f64) -> Vec<Violation> {
        let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, a) in self.aircraft.iter().enumerate() {
            if a.is_enroute() {
                grid.entry(cell(a.position, d_los)).or_default().push(i);
            }
        }
        let mut out = Vec::new();
        for (i, a) in self.aircraft.iter().enumerate() {
            if !a.is_enroute() {
                continue;
            }
            let (cx, cy) = cell(a.position, d_los);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j <= i {
                            continue;
                        }
                        let d = a.distance_3d(&self.aircraft[j]);
                        if d < d_los {
                            out.push(Violation {
                                a: i,
                                b: j,
                                distance_m: d,
                            });
                        }
                    }
                }
            }
        }
        out.sort_by(|x, y| x.a.cmp(&y.a).then(x.b.cmp(&y.b)));
        out
    }

    /// One physics step: spawn, apply commands on decision ticks, move, check LOS.
    ///
    /// `actions` is indexed by flight. On a decision tick every airborne
    /// aircraft needs an entry; on other ticks it is ignored and may be empty.
    pub fn step(&mut self, actions: &[Option<Action>]) -> Result<StepEvents> {
        let mut events = StepEvents {
            spawned: self.spawn_due(),
            ..StepEvents::default()
        };
        if self.is_decision_tick() {
            let layers = self.scenario.network.layers.clone();
            for i in 0..self.aircraft.len() {
                if !self.aircraft[i].is_enroute() {
                    continue;
                }
                let action = actions.get(i).copied().flatten().ok_or_else(|| {
                    Error::Contract(format!(
                        "no action for airborne flight {} at t={}",
                        self.scenario.flights[i].id,
                        self.time()
                    ))
                })?;
                let done = apply_altitude_command(&mut self.aircraft[i], action, &layers);
                events.executed.push((i, done));
            }
        }
        let dt = self.config.dt;
        events.arrived = self.advance_kinematics(dt);
        self.step_index += 1;
        let violations = self.detect_los(self.config.d_los);
        events.los_onsets = self.los.update(self.time(), dt, &violations);
        Ok(events)
    }

    /// Every LOS event so far, including ones still in progress, ordered by onset.
    pub fn los_events(&self) -> Vec<LosEvent> {
        self.los.all_events()
    }
}

fn cell(p: Point, size: f64) -> (i64, i64) {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}
