//! Vertiport/corridor topology, routes, noise zones and the scenario file.
//!
//! Coordinates are planar meters in a local flat projection. Every layer in
//! [`AltitudeLayers`] carries the same set of directed links, so a route is a
//! purely horizontal object and altitude is owned by the simulator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub const SCHEMA_VERSION: u32 = 1;

/// Built-in scenario files.
pub mod bundled {
    /// Schematic ten-vertiport network with 136 flights over 28 O-D pairs.
    pub const SOUTH_AUSTIN: &str = include_str!("../data/south_austin.json");
    /// Three vertiports on a line, twelve flights.
    pub const LINE3: &str = include_str!("../data/line3.json");
    /// One long corridor with a single flight.
    pub const TOY_CORRIDOR: &str = include_str!("../data/toy_corridor.json");
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Point, f: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * f,
            self.y + (other.y - self.y) * f,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertiport {
    pub id: String,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    /// Index into [`Network::vertiports`].
    pub from: usize,
    pub to: usize,
    pub length_m: f64,
}

/// Strictly increasing flight levels in feet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AltitudeLayers(Vec<f64>);

impl AltitudeLayers {
    pub fn new(levels_ft: Vec<f64>) -> Result<Self> {
        if levels_ft.is_empty() {
            return Err(Error::validation(
                "layers_ft",
                "at least one layer required",
            ));
        }
        for (i, &z) in levels_ft.iter().enumerate() {
            if !z.is_finite() || z <= 0.0 {
                return Err(Error::validation(
                    format!("layers_ft[{i}]"),
                    format!("altitude {z} must be finite and positive"),
                ));
            }
        }
        if let Some(i) = levels_ft.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::validation(
                format!("layers_ft[{}]", i + 1),
                "layers must be strictly increasing",
            ));
        }
        Ok(AltitudeLayers(levels_ft))
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        *self.0.last().expect("non-empty")
    }

    pub fn span(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn top(&self) -> usize {
        self.0.len() - 1
    }

    /// Index of the layer exactly equal to `z_ft`.
    pub fn index_of(&self, z_ft: f64) -> Option<usize> {
        self.0.iter().position(|&l| l == z_ft)
    }

    pub fn level(&self, index: usize) -> f64 {
        self.0[index]
    }
}

impl Default for AltitudeLayers {
    fn default() -> Self {
        AltitudeLayers(vec![1000.0, 1500.0, 2000.0, 2500.0, 3000.0])
    }
}

impl TryFrom<Vec<f64>> for AltitudeLayers {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        AltitudeLayers::new(v)
    }
}

impl From<AltitudeLayers> for Vec<f64> {
    fn from(l: AltitudeLayers) -> Self {
        l.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseZone {
    pub id: String,
    pub members: Vec<String>,
    pub ambient_db: f64,
}

/// Validated topology. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub vertiports: Vec<Vertiport>,
    pub links: Vec<Link>,
    pub layers: AltitudeLayers,
    pub zones: Vec<NoiseZone>,
    vertiport_index: BTreeMap<String, usize>,
    link_index: BTreeMap<String, usize>,
    zone_of_link: Vec<usize>,
    zone_of_vertiport: Vec<usize>,
}

impl Network {
    pub fn vertiport(&self, id: &str) -> Option<usize> {
        self.vertiport_index.get(id).copied()
    }

    pub fn link(&self, id: &str) -> Option<usize> {
        self.link_index.get(id).copied()
    }

    pub fn zone_of_link(&self, link: usize) -> usize {
        self.zone_of_link[link]
    }

    pub fn zone_of_vertiport(&self, vertiport: usize) -> usize {
        self.zone_of_vertiport[vertiport]
    }

    pub fn zone_index(&self, id: &str) -> Option<usize> {
        self.zones.iter().position(|z| z.id == id)
    }

    pub fn link_endpoints(&self, link: usize) -> (Point, Point) {
        let l = &self.links[link];
        (
            self.vertiports[l.from].position,
            self.vertiports[l.to].position,
        )
    }

    /// Shortest directed path by total link length.
    ///
    /// Ties (within 1e-9 m) are broken by the lexicographically smallest
    /// sequence of link ids.
    pub fn build_route(&self, origin: &str, destination: &str) -> Result<Route> {
        let o = self
            .vertiport(origin)
            .ok_or_else(|| Error::validation(origin, "unknown origin vertiport"))?;
        let d = self
            .vertiport(destination)
            .ok_or_else(|| Error::validation(destination, "unknown destination vertiport"))?;
        if o == d {
            return Err(Error::validation(
                origin,
                "origin and destination must differ",
            ));
        }
        let no_path = || Error::NoPath {
            origin: origin.to_string(),
            destination: destination.to_string(),
        };

        let n = self.vertiports.len();
        let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; n];
        let mut settled = vec![false; n];
        best[o] = Some((0.0, Vec::new()));
        loop {
            let mut pick: Option<usize> = None;
            for v in 0..n {
                if settled[v] || best[v].is_none() {
                    continue;
                }
                pick = match pick {
                    None => Some(v),
                    Some(u)
                        if self
                            .label_less(best[v].as_ref().unwrap(), best[u].as_ref().unwrap()) =>
                    {
                        Some(v)
                    }
                    keep => keep,
                };
            }
            let Some(u) = pick else { break };
            settled[u] = true;
            if u == d {
                break;
            }
            let (cost_u, path_u) = best[u].clone().unwrap();
            for (li, link) in self.links.iter().enumerate() {
                if link.from != u || settled[link.to] {
                    continue;
                }
                let mut path = path_u.clone();
                path.push(li);
                let cand = (cost_u + link.length_m, path);
                let better = match &best[link.to] {
                    None => true,
                    Some(cur) => self.label_less(&cand, cur),
                };
                if better {
                    best[link.to] = Some(cand);
                }
            }
        }
        let (_, links) = best[d].clone().filter(|_| settled[d]).ok_or_else(no_path)?;
        Ok(Route {
            origin: o,
            destination: d,
            links,
        })
    }

    fn label_less(&self, a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> bool {
        let tol = 1e-9 * a.0.abs().max(b.0.abs()).max(1.0);
        if (a.0 - b.0).abs() > tol {
            return a.0 < b.0;
        }
        let ids_a = a.1.iter().map(|&l| self.links[l].id.as_str());
        let ids_b = b.1.iter().map(|&l| self.links[l].id.as_str());
        ids_a.lt(ids_b)
    }

    pub fn link_ids(&self, route: &Route) -> Vec<&str> {
        route
            .links
            .iter()
            .map(|&l| self.links[l].id.as_str())
            .collect()
    }
}

/// Ordered chain of directed links from origin to destination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Route {
    pub origin: usize,
    pub destination: usize,
    pub links: Vec<usize>,
}

impl Route {
    /// Checks the consecutive-endpoint chain property against `network`.
    pub fn is_chain(&self, network: &Network) -> bool {
        let Some(first) = self.links.first() else {
            return false;
        };
        let last = self.links.last().unwrap();
        if network.links[*first].from != self.origin || network.links[*last].to != self.destination
        {
            return false;
        }
        self.links
            .windows(2)
            .all(|w| network.links[w[0]].to == network.links[w[1]].from)
    }

    pub fn length_m(&self, network: &Network) -> f64 {
        self.links.iter().map(|&l| network.links[l].length_m).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flight {
    pub id: String,
    pub origin: usize,
    pub destination: usize,
    pub departure_s: f64,
    pub route: Route,
}

/// A network plus the flights that will traverse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: Arc<Network>,
    pub flights: Vec<Flight>,
}

impl Scenario {
    /// Distinct routes in first-appearance order, plus each flight's route index.
    pub fn distinct_routes(&self) -> (Vec<Route>, Vec<usize>) {
        let mut routes: Vec<Route> = Vec::new();
        let mut index = Vec::with_capacity(self.flights.len());
        for f in &self.flights {
            match routes.iter().position(|r| *r == f.route) {
                Some(i) => index.push(i),
                None => {
                    index.push(routes.len());
                    routes.push(f.route.clone());
                }
            }
        }
        (routes, index)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::parse("scenario file", e))?;
        file.into_scenario()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&util::read_to_string(path)?).map_err(|e| with_path(e, path))
    }

    pub fn to_file(&self) -> ScenarioFile {
        let net = &self.network;
        let mut file = ScenarioFile::from_network(net);
        file.flights = self
            .flights
            .iter()
            .map(|f| FlightRecord {
                id: f.id.clone(),
                origin: net.vertiports[f.origin].id.clone(),
                destination: net.vertiports[f.destination].id.clone(),
                departure_s: f.departure_s,
            })
            .collect();
        file
    }

    pub fn to_json(&self) -> String {
        self.to_file().to_json()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, self.to_json().as_bytes())
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { what, message } => Error::Parse {
            what: format!("{what} {}", path.display()),
            message,
        },
        other => other,
    }
}

pub fn load_network(path: &Path) -> Result<Network> {
    let text = util::read_to_string(path)?;
    let file: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(format!("scenario file {}", path.display()), e))?;
    file.build_network()
}

/// Assigns `n_aircraft` flights to `od_pairs` round-robin over a seeded shuffle.
///
/// Departures from the same origin are spaced `departure_spacing_s` apart,
/// starting at t = 0.
pub fn generate_scenario(
    network: Arc<Network>,
    n_aircraft: usize,
    od_pairs: &[(String, String)],
    departure_spacing_s: f64,
    seed: u64,
) -> Result<Scenario> {
    if n_aircraft == 0 {
        return Err(Error::validation("n_aircraft", "must be at least 1"));
    }
    if od_pairs.is_empty() {
        return Err(Error::validation("od_pairs", "must be non-empty"));
    }
    if !(departure_spacing_s >= 0.0 && departure_spacing_s.is_finite()) {
        return Err(Error::validation(
            "departure_spacing",
            "must be finite and non-negative",
        ));
    }
    let mut routes = Vec::with_capacity(od_pairs.len());
    for (o, d) in od_pairs {
        routes.push(network.build_route(o, d)?);
    }
    let mut order: Vec<usize> = (0..od_pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let width = n_aircraft.to_string().len().max(3);
    let mut per_origin: BTreeMap<usize, usize> = BTreeMap::new();
    let flights = (0..n_aircraft)
        .map(|k| {
            let route = routes[order[k % order.len()]].clone();
            let slot = per_origin.entry(route.origin).or_insert(0);
            let departure_s = *slot as f64 * departure_spacing_s;
            *slot += 1;
            Flight {
                id: format!("AC{:0width$}", k, width = width),
                origin: route.origin,
                destination: route.destination,
                departure_s,
                route,
            }
        })
        .collect();
    Ok(Scenario { network, flights })
}

/// Why two routes are considered interacting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relation {
    pub shared_links: Vec<usize>,
    pub shared_vertiports: Vec<usize>,
    /// Planar points where links of the two routes cross away from a common vertiport.
    pub crossings: Vec<Point>,
}

impl Relation {
    pub fn is_related(&self) -> bool {
        !(self.shared_links.is_empty()
            && self.shared_vertiports.is_empty()
            && self.crossings.is_empty())
    }
}

/// Symmetric relation over a fixed list of routes.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteRelations {
    n: usize,
    related: Vec<bool>,
    details: BTreeMap<(usize, usize), Relation>,
}

impl RouteRelations {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn related(&self, a: usize, b: usize) -> bool {
        self.related[a * self.n + b]
    }

    /// Detail for the pair, present only for related pairs.
    pub fn relation(&self, a: usize, b: usize) -> Option<&Relation> {
        self.details.get(&(a.min(b), a.max(b)))
    }
}

/// Two routes are related iff they share a link, share a vertiport, or have
/// link segments that cross in the plane.
pub fn route_intersections(network: &Network, routes: &[Route]) -> RouteRelations {
    let n = routes.len();
    let mut related = vec![false; n * n];
    let mut details = BTreeMap::new();
    for i in 0..n {
        for j in i..n {
            let rel = relate(network, &routes[i], &routes[j]);
            if rel.is_related() {
                related[i * n + j] = true;
                related[j * n + i] = true;
                details.insert((i, j), rel);
            }
        }
    }
    RouteRelations {
        n,
        related,
        details,
    }
}

fn route_vertiports(network: &Network, r: &Route) -> BTreeSet<usize> {
    let mut s = BTreeSet::new();
    for &l in &r.links {
        s.insert(network.links[l].from);
        s.insert(network.links[l].to);
    }
    s
}

fn relate(network: &Network, a: &Route, b: &Route) -> Relation {
    let links_b: BTreeSet<usize> = b.links.iter().copied().collect();
    let mut shared_links: Vec<usize> = a
        .links
        .iter()
        .copied()
        .filter(|l| links_b.contains(l))
        .collect();
    shared_links.sort_unstable();
    shared_links.dedup();
    let shared_vertiports = route_vertiports(network, a)
        .intersection(&route_vertiports(network, b))
        .copied()
        .collect();
    let mut crossings = Vec::new();
    for &la in &a.links {
        for &lb in &b.links {
            let (ea, eb) = (&network.links[la], &network.links[lb]);
            let touching = [ea.from, ea.to]
                .iter()
                .any(|v| *v == eb.from || *v == eb.to);
            if touching {
                continue;
            }
            let (p1, p2) = network.link_endpoints(la);
            let (q1, q2) = network.link_endpoints(lb);
            if let Some(p) = segment_intersection(p1, p2, q1, q2) {
                crossings.push(p);
            }
        }
    }
    Relation {
        shared_links,
        shared_vertiports,
        crossings,
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn sub(a: Point, b: Point) -> Point {
    Point::new(a.x - b.x, a.y - b.y)
}

/// Intersection point of closed segments `p1p2` and `q1q2`, if any.
///
/// Collinear overlapping segments report the first overlapping endpoint.
pub fn segment_intersection(p1: Point, p2: Point, q1: Point, q2: Point) -> Option<Point> {
    let r = sub(p2, p1);
    let s = sub(q2, q1);
    let denom = cross(r, s);
    let qp = sub(q1, p1);
    if denom == 0.0 {
        if cross(qp, r) != 0.0 {
            return None;
        }
        let rr = r.x * r.x + r.y * r.y;
        if rr == 0.0 {
            return None;
        }
        let t0 = (qp.x * r.x + qp.y * r.y) / rr;
        let t1 = t0 + (s.x * r.x + s.y * r.y) / rr;
        let (lo, hi) = (t0.min(t1), t0.max(t1));
        if hi < 0.0 || lo > 1.0 {
            return None;
        }
        return Some(p1.lerp(p2, lo.max(0.0)));
    }
    let t = cross(qp, s) / denom;
    let u = cross(qp, r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(p1.lerp(p2, t))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    pub vertiports: Vec<VertiportRecord>,
    pub links: Vec<LinkRecord>,
    pub layers_ft: Vec<f64>,
    pub zones: Vec<ZoneRecord>,
    #[serde(default)]
    pub flights: Vec<FlightRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertiportRecord {
    pub id: String,
    pub x_m: f64,
    pub y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRecord {
    pub id: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneRecord {
    pub id: String,
    pub members: Vec<String>,
    pub ambient_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlightRecord {
    pub id: String,
    pub origin: String,
    pub destination: String,
    pub departure_s: f64,
}

impl ScenarioFile {
    pub fn from_network(net: &Network) -> Self {
        ScenarioFile {
            schema: SCHEMA_VERSION,
            vertiports: net
                .vertiports
                .iter()
                .map(|v| VertiportRecord {
                    id: v.id.clone(),
                    x_m: v.position.x,
                    y_m: v.position.y,
                })
                .collect(),
            links: net
                .links
                .iter()
                .map(|l| LinkRecord {
                    id: l.id.clone(),
                    from: net.vertiports[l.from].id.clone(),
                    to: net.vertiports[l.to].id.clone(),
                })
                .collect(),
            layers_ft: net.layers.levels().to_vec(),
            zones: net
                .zones
                .iter()
                .map(|z| ZoneRecord {
                    id: z.id.clone(),
                    members: z.members.clone(),
                    ambient_db: z.ambient_db,
                })
                .collect(),
            flights: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    pub fn build_network(&self) -> Result<Network> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema),
            ));
        }
        let mut vertiport_index = BTreeMap::new();
        let mut vertiports = Vec::with_capacity(self.vertiports.len());
        for v in &self.vertiports {
            if !(v.x_m.is_finite() && v.y_m.is_finite()) {
                return Err(Error::validation(
                    format!("vertiport {}", v.id),
                    "position must be finite",
                ));
            }
            if vertiport_index
                .insert(v.id.clone(), vertiports.len())
                .is_some()
            {
                return Err(Error::validation(
                    format!("vertiport {}", v.id),
                    "duplicate id",
                ));
            }
            vertiports.push(Vertiport {
                id: v.id.clone(),
                position: Point::new(v.x_m, v.y_m),
            });
        }

        let mut link_index = BTreeMap::new();
        let mut directed = BTreeSet::new();
        let mut links = Vec::with_capacity(self.links.len());
        for l in &self.links {
            let entity = || format!("link {}", l.id);
            if vertiport_index.contains_key(&l.id) {
                return Err(Error::validation(
                    entity(),
                    "id collides with a vertiport id",
                ));
            }
            let from = *vertiport_index.get(&l.from).ok_or_else(|| {
                Error::validation(entity(), format!("unknown vertiport `{}`", l.from))
            })?;
            let to = *vertiport_index.get(&l.to).ok_or_else(|| {
                Error::validation(entity(), format!("unknown vertiport `{}`", l.to))
            })?;
            if from == to {
                return Err(Error::validation(entity(), "from and to must differ"));
            }
            if !directed.insert((from, to)) {
                return Err(Error::validation(
                    entity(),
                    format!("duplicate corridor {} -> {}", l.from, l.to),
                ));
            }
            if link_index.insert(l.id.clone(), links.len()).is_some() {
                return Err(Error::validation(entity(), "duplicate id"));
            }
            let length_m = vertiports[from].position.distance(vertiports[to].position);
            if length_m <= 0.0 {
                return Err(Error::validation(entity(), "endpoints coincide"));
            }
            links.push(Link {
                id: l.id.clone(),
                from,
                to,
                length_m,
            });
        }

        let layers = AltitudeLayers::new(self.layers_ft.clone())?;

        let mut zone_of_link = vec![usize::MAX; links.len()];
        let mut zone_of_vertiport = vec![usize::MAX; vertiports.len()];
        let mut zone_ids = BTreeSet::new();
        let mut zones = Vec::with_capacity(self.zones.len());
        for (zi, z) in self.zones.iter().enumerate() {
            let entity = || format!("zone {}", z.id);
            if !zone_ids.insert(z.id.clone()) {
                return Err(Error::validation(entity(), "duplicate id"));
            }
            if !z.ambient_db.is_finite() {
                return Err(Error::validation(entity(), "ambient_db must be finite"));
            }
            for m in &z.members {
                let slot = if let Some(&li) = link_index.get(m) {
                    &mut zone_of_link[li]
                } else if let Some(&vi) = vertiport_index.get(m) {
                    &mut zone_of_vertiport[vi]
                } else {
                    return Err(Error::validation(entity(), format!("unknown member `{m}`")));
                };
                if *slot != usize::MAX {
                    return Err(Error::validation(
                        entity(),
                        format!("member `{m}` already belongs to another zone"),
                    ));
                }
                *slot = zi;
            }
            zones.push(NoiseZone {
                id: z.id.clone(),
                members: z.members.clone(),
                ambient_db: z.ambient_db,
            });
        }
        if let Some(li) = zone_of_link.iter().position(|&z| z == usize::MAX) {
            return Err(Error::validation(
                format!("link {}", links[li].id),
                "not assigned to any noise zone",
            ));
        }
        if let Some(vi) = zone_of_vertiport.iter().position(|&z| z == usize::MAX) {
            return Err(Error::validation(
                format!("vertiport {}", vertiports[vi].id),
                "not assigned to any noise zone",
            ));
        }

        Ok(Network {
            vertiports,
            links,
            layers,
            zones,
            vertiport_index,
            link_index,
            zone_of_link,
            zone_of_vertiport,
        })
    }

    pub fn into_scenario(self) -> Result<Scenario> {
        let network = Arc::new(self.build_network()?);
        let mut ids = BTreeSet::new();
        let mut flights = Vec::with_capacity(self.flights.len());
        for f in &self.flights {
            let entity = || format!("flight {}", f.id);
            if !ids.insert(f.id.clone()) {
                return Err(Error::validation(entity(), "duplicate id"));
            }
            if !(f.departure_s.is_finite() && f.departure_s >= 0.0) {
                return Err(Error::validation(
                    entity(),
                    "departure_s must be finite and >= 0",
                ));
            }
            let route = network
                .build_route(&f.origin, &f.destination)
                .map_err(|e| Error::validation(entity(), e.to_string()))?;
            flights.push(Flight {
                id: f.id.clone(),
                origin: route.origin,
                destination: route.destination,
                departure_s: f.departure_s,
                route,
            });
        }
        Ok(Scenario { network, flights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(vertiports: &[(&str, f64, f64)], links: &[(&str, &str, &str)]) -> ScenarioFile {
        let mut members: Vec<String> = vertiports.iter().map(|v| v.0.to_string()).collect();
        members.extend(links.iter().map(|l| l.0.to_string()));
        ScenarioFile {
            schema: 1,
            vertiports: vertiports
                .iter()
                .map(|&(id, x, y)| VertiportRecord {
                    id: id.into(),
                    x_m: x,
                    y_m: y,
                })
                .collect(),
            links: links
                .iter()
                .map(|&(id, f, t)| LinkRecord {
                    id: id.into(),
                    from: f.into(),
                    to: t.into(),
                })
                .collect(),
            layers_ft: vec![1000.0, 1500.0, 2000.0, 2500.0, 3000.0],
            zones: vec![ZoneRecord {
                id: "Z".into(),
                members,
                ambient_db: 40.0,
            }],
            flights: vec![],
        }
    }

    fn diamond() -> Network {
        file(
            &[
                ("A", 0.0, 0.0),
                ("B", 1000.0, 1000.0),
                ("C", 1000.0, -1000.0),
                ("D", 2000.0, 0.0),
            ],
            &[
                ("L2", "A", "C"),
                ("L1", "A", "B"),
                ("L4", "C", "D"),
                ("L3", "B", "D"),
            ],
        )
        .build_network()
        .unwrap()
    }

    #[test]
    fn minimal_network_is_valid() {
        let net = file(&[("A", 0.0, 0.0), ("B", 500.0, 0.0)], &[("AB", "A", "B")])
            .build_network()
            .unwrap();
        assert_eq!(net.links.len(), 1);
        assert_eq!(net.links[0].length_m, 500.0);
    }

    #[test]
    fn dangling_link_names_the_link() {
        let err = file(&[("A", 0.0, 0.0), ("B", 500.0, 0.0)], &[("AX", "A", "X")])
            .build_network()
            .unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("link AX"), "{err}");
    }

    #[test]
    fn duplicate_ids_and_bad_layers_rejected() {
        let err = file(&[("A", 0.0, 0.0), ("A", 500.0, 0.0)], &[])
            .build_network()
            .unwrap_err();
        assert!(err.to_string().contains("vertiport A"), "{err}");

        let mut f = file(&[("A", 0.0, 0.0), ("B", 500.0, 0.0)], &[("AB", "A", "B")]);
        f.layers_ft = vec![1000.0, 1000.0];
        assert!(f
            .build_network()
            .unwrap_err()
            .to_string()
            .contains("layers_ft[1]"));

        let f = file(
            &[("A", 0.0, 0.0), ("B", 500.0, 0.0)],
            &[("AB", "A", "B"), ("AB2", "A", "B")],
        );
        assert!(f.build_network().unwrap_err().to_string().contains("AB2"));
    }

    #[test]
    fn zone_partition_enforced() {
        let mut f = file(&[("A", 0.0, 0.0), ("B", 500.0, 0.0)], &[("AB", "A", "B")]);
        f.zones[0].members.retain(|m| m != "AB");
        assert!(f
            .build_network()
            .unwrap_err()
            .to_string()
            .contains("link AB"));

        let mut f = file(&[("A", 0.0, 0.0), ("B", 500.0, 0.0)], &[("AB", "A", "B")]);
        f.zones.push(ZoneRecord {
            id: "Z2".into(),
            members: vec!["A".into()],
            ambient_db: 30.0,
        });
        assert!(f
            .build_network()
            .unwrap_err()
            .to_string()
            .contains("zone Z2"));
    }

    #[test]
    fn schema_version_required() {
        let mut f = file(&[("A", 0.0, 0.0), ("B", 500.0, 0.0)], &[("AB", "A", "B")]);
        f.schema = 2;
        assert!(f.build_network().is_err());
        let text = r#"{"vertiports":[],"links":[],"layers_ft":[1000],"zones":[]}"#;
        assert!(matches!(
            Scenario::from_json(text),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn direct_and_line_routes() {
        let net = file(
            &[("A", 0.0, 0.0), ("B", 1000.0, 0.0), ("C", 2000.0, 0.0)],
            &[("AB", "A", "B"), ("BC", "B", "C"), ("BA", "B", "A")],
        )
        .build_network()
        .unwrap();
        assert_eq!(net.link_ids(&net.build_route("A", "B").unwrap()), ["AB"]);
        let r = net.build_route("A", "C").unwrap();
        assert_eq!(net.link_ids(&r), ["AB", "BC"]);
        assert!(r.is_chain(&net));
        assert!(matches!(
            net.build_route("C", "A"),
            Err(Error::NoPath { .. })
        ));
        assert!(net.build_route("A", "A").is_err());
    }

    #[test]
    fn diamond_tie_breaks_lexicographically() {
        // A-B-D and A-C-D are both 2*sqrt(2) km; ["L1","L3"] < ["L2","L4"].
        let net = diamond();
        assert_eq!(
            net.link_ids(&net.build_route("A", "D").unwrap()),
            ["L1", "L3"]
        );
    }

    #[test]
    fn shorter_path_beats_lexicographic_order() {
        let net = file(
            &[
                ("A", 0.0, 0.0),
                ("B", 1000.0, 3000.0),
                ("C", 1000.0, -10.0),
                ("D", 2000.0, 0.0),
            ],
            &[
                ("L1", "A", "B"),
                ("L3", "B", "D"),
                ("L8", "A", "C"),
                ("L9", "C", "D"),
            ],
        )
        .build_network()
        .unwrap();
        assert_eq!(
            net.link_ids(&net.build_route("A", "D").unwrap()),
            ["L8", "L9"]
        );
    }

    #[test]
    fn generate_single_flight() {
        let net = Arc::new(diamond());
        let s = generate_scenario(net, 1, &[("A".into(), "D".into())], 60.0, 3).unwrap();
        assert_eq!(s.flights.len(), 1);
        assert_eq!(s.flights[0].departure_s, 0.0);
    }

    #[test]
    fn generate_staggers_per_origin() {
        let net = Arc::new(diamond());
        let pairs = vec![
            ("A".to_string(), "D".to_string()),
            ("B".to_string(), "D".to_string()),
        ];
        let s = generate_scenario(net, 5, &pairs, 60.0, 11).unwrap();
        let mut seen: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for f in &s.flights {
            seen.entry(f.origin).or_default().push(f.departure_s);
        }
        for deps in seen.values() {
            let expect: Vec<f64> = (0..deps.len()).map(|k| k as f64 * 60.0).collect();
            assert_eq!(deps, &expect);
        }
    }

    #[test]
    fn parallel_corridors_unrelated_crossing_related() {
        let net = file(
            &[
                ("A", 0.0, 0.0),
                ("B", 1000.0, 0.0),
                ("C", 0.0, 500.0),
                ("D", 1000.0, 500.0),
                ("E", 500.0, -500.0),
                ("F", 500.0, 1000.0),
            ],
            &[("AB", "A", "B"), ("CD", "C", "D"), ("EF", "E", "F")],
        )
        .build_network()
        .unwrap();
        let routes: Vec<Route> = [("A", "B"), ("C", "D"), ("E", "F")]
            .iter()
            .map(|(o, d)| net.build_route(o, d).unwrap())
            .collect();
        let rel = route_intersections(&net, &routes);
        assert!(!rel.related(0, 1));
        assert!(rel.related(0, 2) && rel.related(2, 0));
        assert_eq!(
            rel.relation(2, 0).unwrap().crossings,
            vec![Point::new(500.0, 0.0)]
        );
        assert!(rel.related(1, 1));
    }

    #[test]
    fn collinear_overlap_reported() {
        let p = segment_intersection(
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(5.0, 0.0),
            Point::new(20.0, 0.0),
        );
        assert_eq!(p, Some(Point::new(5.0, 0.0)));
        assert_eq!(
            segment_intersection(
                Point::new(0.0, 0.0),
                Point::new(10.0, 0.0),
                Point::new(11.0, 0.0),
                Point::new(20.0, 0.0),
            ),
            None
        );
    }

    #[test]
    fn layers_lookup() {
        let l = AltitudeLayers::default();
        assert_eq!(l.index_of(2000.0), Some(2));
        assert_eq!(l.index_of(2100.0), None);
        assert_eq!(l.span(), 2000.0);
    }
}
