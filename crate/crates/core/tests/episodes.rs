//! End-to-end behavior of episodes, rollouts, training and evaluation.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uam_core::env::{HoldController, ScriptedController};
use uam_core::eval::{
    environment, export_metrics, import_metrics_json, metrics_from_trace, read_trace, run_episode,
    sweep_rho, write_trace, Format, Policy, SweepPolicies,
};
use uam_core::mdp::{Action, RewardConfig};
use uam_core::network::{bundled, generate_scenario, Scenario};
use uam_core::rl::train::train_log_csv;
use uam_core::rl::{collect_rollout, train, NetShape, PolicyParams, TrainConfig};
use uam_core::sim::{SimConfig, World, FT_TO_M};

fn reward(rho: f64) -> RewardConfig {
    RewardConfig::new(rho, &Default::default(), 150.0)
}

fn line3() -> Arc<Scenario> {
    Arc::new(Scenario::from_json(bundled::LINE3).unwrap())
}

#[test]
fn bundled_south_austin_matches_published_counts() {
    let sc = Scenario::from_json(bundled::SOUTH_AUSTIN).unwrap();
    assert_eq!(sc.network.vertiports.len(), 10);
    assert_eq!(sc.network.links.len(), 38);
    assert_eq!(sc.flights.len(), 136);
    let mut uses: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in &sc.flights {
        *uses.entry((f.origin, f.destination)).or_default() += 1;
    }
    assert_eq!(uses.len(), 28);
    assert!(uses.values().all(|&u| u == 4 || u == 5));
    assert_eq!(
        sc.network.layers.levels(),
        &[1000.0, 1500.0, 2000.0, 2500.0, 3000.0]
    );
}

#[test]
fn generated_south_austin_uses_pairs_evenly() {
    let base = Scenario::from_json(bundled::SOUTH_AUSTIN).unwrap();
    let od: Vec<(String, String)> = base
        .flights
        .iter()
        .map(|f| {
            (
                base.network.vertiports[f.origin].id.clone(),
                base.network.vertiports[f.destination].id.clone(),
            )
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let sc = generate_scenario(base.network.clone(), 136, &od, 60.0, 7).unwrap();
    let mut uses: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for f in &sc.flights {
        *uses.entry((f.origin, f.destination)).or_default() += 1;
    }
    assert_eq!(uses.len(), 28);
    assert!(uses.values().all(|&u| u == 136 / 28 || u == 136 / 28 + 1));
    let one = generate_scenario(base.network.clone(), 1, &od, 60.0, 7).unwrap();
    assert_eq!(one.flights.len(), 1);
    assert_eq!(one.flights[0].departure_s, 0.0);
}

#[test]
fn hold_baseline_single_aircraft() {
    let env = environment(common::corridor(20000.0), SimConfig::default(), reward(0.5)).unwrap();
    let (m, rec) = run_episode(&env, &Policy::Hold, 0, true).unwrap();
    assert_eq!(m.los_count, 0);
    assert_eq!(m.histogram, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(rec.trajectories[0].done);
}

#[test]
fn head_on_traffic_at_one_layer_loses_separation() {
    let sc = common::scenario(
        &[("A", 0.0, 0.0), ("B", 20000.0, 0.0)],
        &[("A-B", "A", "B"), ("B-A", "B", "A")],
        &[("F0", "A", "B", 0.0), ("F1", "B", "A", 0.0)],
    );
    let env = environment(sc.clone(), SimConfig::default(), reward(0.0)).unwrap();
    let (m, _) = run_episode(&env, &Policy::Hold, 0, true).unwrap();
    assert!(m.los_count >= 1);

    // Closest approach by direct replay.
    let mut w = World::new(sc, SimConfig::default()).unwrap();
    let hold = vec![Some(Action::Hold); 2];
    let mut min_d = f64::INFINITY;
    while !w.is_terminal() {
        w.step(&hold).unwrap();
        let ac = w.aircraft();
        if ac[0].is_enroute() && ac[1].is_enroute() {
            let dz = (ac[0].z_ft - ac[1].z_ft) * FT_TO_M;
            let d = (ac[0].position.distance(ac[1].position).powi(2) + dz * dz).sqrt();
            min_d = min_d.min(d);
        }
    }
    assert!(min_d < 150.0);
}

#[test]
fn evaluation_replay_matches_direct_simulation() {
    let sc = line3();
    let env = environment(sc.clone(), SimConfig::default(), reward(0.5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut script = BTreeMap::new();
    for t in 0..120u64 {
        for f in 0..12usize {
            script.insert((t, f), Action::ALL[rng.gen_range(0..3)]);
        }
    }
    let rec = env
        .run(
            &mut ScriptedController {
                script: script.clone(),
            },
            None,
        )
        .unwrap();

    // Same log straight through the simulator.
    let mut w = World::new(sc, SimConfig::default()).unwrap();
    let spd = w.config().steps_per_decision();
    let mut rows = Vec::new();
    let mut tick = 0u64;
    while !w.is_terminal() {
        w.spawn_due();
        let layers = w.layers().clone();
        let actions: Vec<Option<Action>> = (0..12)
            .map(|f| {
                let a = &w.aircraft()[f];
                a.is_enroute().then(|| {
                    let want = script[&(tick, f)];
                    let mask = uam_core::mdp::action_mask(a, &layers);
                    if mask[want.index()] {
                        want
                    } else {
                        Action::Hold
                    }
                })
            })
            .collect();
        for a in w.enroute() {
            rows.push((w.time(), a.flight, a.position, a.z_ft));
        }
        w.step(&actions).unwrap();
        for _ in 1..spd {
            if w.is_terminal() {
                break;
            }
            w.step(&[]).unwrap();
        }
        tick += 1;
    }
    assert_eq!(rows.len(), rec.trace.len());
    for (r, t) in rows.iter().zip(&rec.trace) {
        assert_eq!(r.0, t.t);
        assert_eq!(format!("AC{:03}", r.1), t.id);
        assert_eq!((r.2.x, r.2.y, r.3), (t.x, t.y, t.z_ft));
    }
    assert_eq!(w.los_events(), rec.los_events);
}

#[test]
fn metrics_recomputed_from_saved_trace_are_identical() {
    let sc = line3();
    let env = environment(sc.clone(), SimConfig::default(), reward(0.5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = PolicyParams::init(NetShape { hidden: 8 }, &mut rng);
    let (live, rec) = run_episode(&env, &Policy::Learned(params), 5, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace(&path, &rec.trace).unwrap();
    let trace = read_trace(&path).unwrap();
    assert_eq!(trace, rec.trace);
    let again = metrics_from_trace(
        &trace,
        &sc.network,
        env.reward.npd(),
        live.los_count,
        live.mean_return,
        live.episode_time_s,
        live.rho,
        live.seed,
    )
    .unwrap();
    assert_eq!(again, live);
}

#[test]
fn seeded_episodes_repeat_exactly() {
    let env = environment(line3(), SimConfig::default(), reward(0.5)).unwrap();
    let params = PolicyParams::init(NetShape { hidden: 8 }, &mut ChaCha8Rng::seed_from_u64(1));
    let policy = Policy::Learned(params);
    let a = run_episode(&env, &policy, 42, false).unwrap();
    let b = run_episode(&env, &policy, 42, false).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn rollout_shapes() {
    let env = environment(common::corridor(40000.0), SimConfig::default(), reward(1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = PolicyParams::init(NetShape { hidden: 8 }, &mut rng);
    let (batch, _) = collect_rollout(&env, &params, Some(10), &mut rng).unwrap();
    assert!(batch.len() <= 10 && !batch.is_empty());
    assert!(!batch.agents[0].transitions.last().unwrap().done);

    // Parallel corridors 5 km apart never see each other.
    let sc = common::scenario(
        &[
            ("A", 0.0, 0.0),
            ("B", 20000.0, 0.0),
            ("C", 0.0, 5000.0),
            ("D", 20000.0, 5000.0),
        ],
        &[("A-B", "A", "B"), ("C-D", "C", "D")],
        &[("F0", "A", "B", 0.0), ("F1", "C", "D", 0.0)],
    );
    let env = environment(sc, SimConfig::default(), reward(0.5)).unwrap();
    let (batch, _) =
        collect_rollout(&env, &params, None, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(batch.agents.len(), 2);
    assert!(batch
        .transitions()
        .all(|t| t.observation.intruders.is_empty()));
    for a in &batch.agents {
        assert!(a.transitions.last().unwrap().done);
        assert_eq!(a.bootstrap_value, 0.0);
    }
    let again = collect_rollout(&env, &params, None, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap()
        .0;
    assert_eq!(batch, again);
}

#[test]
fn zero_iterations_returns_initial_params() {
    let env = environment(common::corridor(20000.0), SimConfig::default(), reward(1.0)).unwrap();
    let config = TrainConfig {
        iterations: 0,
        hidden: 8,
        seed: 12,
        ..TrainConfig::default()
    };
    let out = train(&env, &config, |_, _| Ok(())).unwrap();
    let init = PolicyParams::init(NetShape { hidden: 8 }, &mut ChaCha8Rng::seed_from_u64(12));
    assert_eq!(out.params, init);
    assert!(out.log.is_empty());
}

#[test]
fn training_is_reproducible() {
    let env = environment(line3(), SimConfig::default(), reward(0.5)).unwrap();
    let config = TrainConfig {
        iterations: 3,
        hidden: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = train(&env, &config, |_, _| Ok(())).unwrap();
    let b = train(&env, &config, |_, _| Ok(())).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(
        train_log_csv(&a.log).unwrap(),
        train_log_csv(&b.log).unwrap()
    );
    assert_eq!(a.log.len(), 3);
}

#[test]
fn sweep_tables_and_checkpoint_fidelity() {
    let sc = line3();
    let config = TrainConfig {
        iterations: 2,
        hidden: 8,
        seed: 1,
        ..TrainConfig::default()
    };
    let sim = SimConfig::default();
    let single = sweep_rho(
        sc.clone(),
        sim,
        &[0.0],
        &[1],
        SweepPolicies::Train(&config),
        true,
    )
    .unwrap();
    assert_eq!(single.result.rows.len(), 1);

    let rhos = [0.0, 0.5, 1.0];
    let seeds = [1, 2];
    let trained = sweep_rho(
        sc.clone(),
        sim,
        &rhos,
        &seeds,
        SweepPolicies::Train(&config),
        false,
    )
    .unwrap();
    assert_eq!(trained.result.cells.len(), 6);
    let loaded = sweep_rho(
        sc.clone(),
        sim,
        &rhos,
        &seeds,
        SweepPolicies::Load(trained.checkpoints.clone()),
        false,
    )
    .unwrap();
    assert_eq!(loaded.result, trained.result);

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("cells.csv");
    export_metrics(
        &trained.result.cells,
        &sc.network.layers,
        &csv_path,
        Format::Csv,
    )
    .unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    let json_path = dir.path().join("cells.json");
    export_metrics(
        &trained.result.cells,
        &sc.network.layers,
        &json_path,
        Format::Json,
    )
    .unwrap();
    assert_eq!(
        import_metrics_json(&json_path).unwrap(),
        trained.result.cells
    );
}

#[test]
fn hub_zone_without_traffic_exports_empty_cell() {
    // The hub zone holds only vertiport B, which aircraft never sit in.
    let env = environment(line3(), SimConfig::default(), reward(0.5)).unwrap();
    let (m, _) = run_episode(&env, &Policy::Hold, 0, true).unwrap();
    let hub = m.zone_mean_db.iter().find(|(z, _)| z == "hub").unwrap();
    assert_eq!(hub.1, None);
    let csv = uam_core::eval::metrics_csv(&[m], &Default::default()).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "zone_hub_db").unwrap();
    assert_eq!(row[col], "");
}

#[test]
fn hold_controller_trace_only_holds() {
    let env = environment(line3(), SimConfig::default(), reward(0.5)).unwrap();
    let rec = env.run(&mut HoldController, None).unwrap();
    assert!(rec
        .trace
        .iter()
        .all(|r| r.action == Action::Hold && r.z_ft == 1000.0));
    assert!(rec.trajectories.iter().all(|t| t.done));
}
