//! Scenario builders and random inputs shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use uam_core::mdp::{ActionMask, Features};
use uam_core::network::{Scenario, ScenarioFile};

/// Builds a scenario with one zone holding every vertiport and link.
pub fn scenario(
    vertiports: &[(&str, f64, f64)],
    links: &[(&str, &str, &str)],
    flights: &[(&str, &str, &str, f64)],
) -> Arc<Scenario> {
    let mut members: Vec<String> = vertiports.iter().map(|v| v.0.to_string()).collect();
    members.extend(links.iter().map(|l| l.0.to_string()));
    let v: Vec<String> = vertiports
        .iter()
        .map(|(id, x, y)| format!(r#"{{"id":"{id}","x_m":{x},"y_m":{y}}}"#))
        .collect();
    let l: Vec<String> = links
        .iter()
        .map(|(id, a, b)| format!(r#"{{"id":"{id}","from":"{a}","to":"{b}"}}"#))
        .collect();
    let f: Vec<String> = flights
        .iter()
        .map(|(id, o, d, t)| {
            format!(r#"{{"id":"{id}","origin":"{o}","destination":"{d}","departure_s":{t}}}"#)
        })
        .collect();
    let text = format!(
        r#"{{"schema":1,"vertiports":[{}],"links":[{}],"layers_ft":[1000,1500,2000,2500,3000],
        "zones":[{{"id":"Z","members":{},"ambient_db":40}}],"flights":[{}]}}"#,
        v.join(","),
        l.join(","),
        serde_json::to_string(&members).unwrap(),
        f.join(",")
    );
    let file: ScenarioFile = serde_json::from_str(&text).unwrap();
    Arc::new(file.into_scenario().unwrap())
}

/// Single westbound-to-eastbound corridor of `length_m` with one flight.
pub fn corridor(length_m: f64) -> Arc<Scenario> {
    scenario(
        &[("W", 0.0, 0.0), ("E", length_m, 0.0)],
        &[("W-E", "W", "E")],
        &[("AC000", "W", "E", 0.0)],
    )
}

/// A star of four long corridors crossing at a hub, with traffic both ways.
pub fn crossing_star(n_flights: usize, spacing_s: f64) -> Arc<Scenario> {
    let r = 12000.0;
    let v = [
        ("H", 0.0, 0.0),
        ("N", 0.0, r),
        ("S", 0.0, -r),
        ("E", r, 0.0),
        ("W", -r, 0.0),
    ];
    let mut links = Vec::new();
    let names: Vec<String> = ["N", "S", "E", "W"]
        .iter()
        .flat_map(|x| [format!("{x}-H"), format!("H-{x}")])
        .collect();
    for n in &names {
        let (a, b) = n.split_once('-').unwrap();
        links.push((n.as_str(), a, b));
    }
    let od = [
        ("N", "S"),
        ("S", "N"),
        ("E", "W"),
        ("W", "E"),
        ("N", "E"),
        ("W", "S"),
    ];
    let ids: Vec<String> = (0..n_flights).map(|i| format!("AC{i:03}")).collect();
    let flights: Vec<(&str, &str, &str, f64)> = (0..n_flights)
        .map(|i| {
            let (o, d) = od[i % od.len()];
            (ids[i].as_str(), o, d, (i / od.len()) as f64 * spacing_s)
        })
        .collect();
    scenario(&v, &links, &flights)
}

pub fn random_features<R: Rng>(rng: &mut R, max_intruders: usize) -> Features {
    let one_hot = |k: usize| {
        let mut v = [0.0; 3];
        v[k] = 1.0;
        v
    };
    let a = one_hot(rng.gen_range(0..3));
    let own = [
        rng.gen::<f64>(),
        f64::from(rng.gen_range(0..2u8)),
        rng.gen::<f64>(),
        a[0],
        a[1],
        a[2],
    ];
    let n = rng.gen_range(0..=max_intruders);
    let intruders = (0..n)
        .map(|_| {
            let a = one_hot(rng.gen_range(0..3));
            [rng.gen_range(-1.0..1.0), rng.gen::<f64>(), a[0], a[1], a[2]]
        })
        .collect();
    Features { own, intruders }
}

pub fn random_mask<R: Rng>(rng: &mut R) -> ActionMask {
    match rng.gen_range(0..4) {
        0 => [true, false, false],
        1 => [true, true, false],
        2 => [true, false, true],
        _ => [true, true, true],
    }
}
