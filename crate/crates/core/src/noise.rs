//! Noise-power-distance (NPD) curves and cumulative zone noise.
//!
//! Single-event levels follow a quadratic in `log10(distance)`:
//! `N = c0 + c1·log10 z + c2·(log10 z)²`, evaluated on a clamped distance
//! domain. Cumulative levels are energy sums reported as an increase over
//! each zone's ambient level.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NoiseZone;
use crate::util;

/// Offset subtracted from the energy sum before comparing with ambient.
pub const CUMULATIVE_OFFSET_DB: f64 = 35.56;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    LevelFlyover,
    Departure,
    Approach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Position {
    Centerline,
    Side,
}

/// Operating mode and receiver position. Exactly six combinations exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub mode: Mode,
    pub position: Position,
}

impl Condition {
    pub const LEVEL_CENTERLINE: Condition =
        Condition::new(Mode::LevelFlyover, Position::Centerline);

    pub const ALL: [Condition; 6] = [
        Condition::new(Mode::LevelFlyover, Position::Centerline),
        Condition::new(Mode::LevelFlyover, Position::Side),
        Condition::new(Mode::Departure, Position::Centerline),
        Condition::new(Mode::Departure, Position::Side),
        Condition::new(Mode::Approach, Position::Centerline),
        Condition::new(Mode::Approach, Position::Side),
    ];

    pub const fn new(mode: Mode, position: Position) -> Self {
        Condition { mode, position }
    }

    fn index(self) -> usize {
        let m = match self.mode {
            Mode::LevelFlyover => 0,
            Mode::Departure => 1,
            Mode::Approach => 2,
        };
        let p = match self.position {
            Position::Centerline => 0,
            Position::Side => 1,
        };
        2 * m + p
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.mode {
            Mode::LevelFlyover => "L",
            Mode::Departure => "D",
            Mode::Approach => "A",
        };
        let p = match self.position {
            Position::Centerline => "Centerline",
            Position::Side => "Side",
        };
        write!(f, "{m}-{p}")
    }
}

impl FromStr for Condition {
    type Err = Error;

    /// Accepts `L-Centerline`, `Mode D - Side`, `a-side` and similar spellings.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .to_ascii_lowercase()
            .replace("mode", "")
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        let (m, p) = norm.split_at(norm.len().min(1));
        let mode = match m {
            "l" => Mode::LevelFlyover,
            "d" => Mode::Departure,
            "a" => Mode::Approach,
            _ => return Err(Error::parse("condition", format!("unknown mode in `{s}`"))),
        };
        let position = match p {
            "centerline" => Position::Centerline,
            "side" => Position::Side,
            _ => {
                return Err(Error::parse(
                    "condition",
                    format!("unknown position in `{s}`"),
                ))
            }
        };
        Ok(Condition { mode, position })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Coefficients {
    pub const fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Coefficients { c0, c1, c2 }
    }

    /// Evaluates the quadratic at `distance_ft` without clamping.
    pub fn eval(&self, distance_ft: f64) -> f64 {
        let x = distance_ft.log10();
        self.c0 + self.c1 * x + self.c2 * x * x
    }
}

/// Regression coefficients for the NASA RVLT quadrotor, in [`Condition::ALL`] order.
#[allow(clippy::approx_constant)]
pub const RVLT_QUADROTOR: [Coefficients; 6] = [
    Coefficients::new(88.09, 3.21, -2.62),
    Coefficients::new(78.01, 7.26, -3.39),
    Coefficients::new(84.05, 8.76, -4.18),
    Coefficients::new(77.34, 11.34, -4.72),
    Coefficients::new(93.35, 5.17, -2.86),
    Coefficients::new(85.55, 6.83, -3.14),
];

#[derive(Debug, Clone, PartialEq)]
pub struct NpdModel {
    coefficients: [Coefficients; 6],
    z_lo_ft: f64,
    z_hi_ft: f64,
}

impl Default for NpdModel {
    fn default() -> Self {
        NpdModel {
            coefficients: RVLT_QUADROTOR,
            z_lo_ft: 200.0,
            z_hi_ft: 20000.0,
        }
    }
}

impl NpdModel {
    pub fn new(coefficients: [Coefficients; 6], z_lo_ft: f64, z_hi_ft: f64) -> Result<Self> {
        if !(z_lo_ft > 0.0 && z_lo_ft < z_hi_ft && z_hi_ft.is_finite()) {
            return Err(Error::validation(
                "npd domain",
                format!("need 0 < z_lo < z_hi, got [{z_lo_ft}, {z_hi_ft}]"),
            ));
        }
        for (c, k) in Condition::ALL.iter().zip(&coefficients) {
            if !(k.c0.is_finite() && k.c1.is_finite() && k.c2.is_finite()) {
                return Err(Error::validation(
                    format!("npd {c}"),
                    "coefficients must be finite",
                ));
            }
        }
        Ok(NpdModel {
            coefficients,
            z_lo_ft,
            z_hi_ft,
        })
    }

    pub fn coefficients(&self, condition: Condition) -> Coefficients {
        self.coefficients[condition.index()]
    }

    pub fn set_coefficients(&mut self, condition: Condition, c: Coefficients) {
        self.coefficients[condition.index()] = c;
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.z_lo_ft, self.z_hi_ft)
    }

    /// A-weighted SEL at `slant_distance_ft`, clamped to the model domain.
    pub fn single_event_level(&self, condition: Condition, slant_distance_ft: f64) -> Result<f64> {
        if !(slant_distance_ft > 0.0) {
            return Err(Error::Domain(slant_distance_ft));
        }
        let z = slant_distance_ft.clamp(self.z_lo_ft, self.z_hi_ft);
        Ok(self.coefficients(condition).eval(z))
    }

    /// Level-flyover centerline SEL, the condition used throughout the simulator.
    pub fn flyover_level(&self, slant_distance_ft: f64) -> Result<f64> {
        self.single_event_level(Condition::LEVEL_CENTERLINE, slant_distance_ft)
    }

    pub fn to_file(&self) -> NpdFile {
        NpdFile {
            z_lo_ft: self.z_lo_ft,
            z_hi_ft: self.z_hi_ft,
            conditions: Condition::ALL
                .iter()
                .map(|&c| {
                    let k = self.coefficients(c);
                    NpdRow {
                        condition: c.to_string(),
                        c0: k.c0,
                        c1: k.c1,
                        c2: k.c2,
                    }
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = util::read_to_string(path)?;
        let file: NpdFile = serde_json::from_str(&text)
            .map_err(|e| Error::parse(format!("npd model {}", path.display()), e))?;
        file.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("npd serializes");
        s.push('\n');
        util::write_atomic(path, s.as_bytes())
    }
}

/// On-disk NPD model: six condition rows plus the distance domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpdFile {
    pub z_lo_ft: f64,
    pub z_hi_ft: f64,
    pub conditions: Vec<NpdRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpdRow {
    pub condition: String,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl NpdFile {
    pub fn into_model(self) -> Result<NpdModel> {
        let mut coeffs: [Option<Coefficients>; 6] = [None; 6];
        for row in &self.conditions {
            let c: Condition = row.condition.parse()?;
            let slot = &mut coeffs[c.index()];
            if slot.is_some() {
                return Err(Error::validation(
                    format!("npd {c}"),
                    "duplicate condition row",
                ));
            }
            *slot = Some(Coefficients::new(row.c0, row.c1, row.c2));
        }
        let mut out = RVLT_QUADROTOR;
        for (i, c) in coeffs.iter().enumerate() {
            out[i] = c.ok_or_else(|| {
                Error::validation(
                    format!("npd {}", Condition::ALL[i]),
                    "missing condition row",
                )
            })?;
        }
        NpdModel::new(out, self.z_lo_ft, self.z_hi_ft)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    pub distance_ft: f64,
    pub level_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpdFit {
    pub coefficients: Coefficients,
    /// Root-mean-square residual in dB.
    pub rms_residual: f64,
}

/// Least-squares fit of `{1, log10 z, (log10 z)²}` via Householder QR.
pub fn fit_npd(samples: &[NoiseSample]) -> Result<NpdFit> {
    for s in samples {
        if !(s.distance_ft > 0.0) || !s.level_db.is_finite() {
            return Err(Error::Domain(s.distance_ft));
        }
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.distance_ft).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::RankDeficient(distinct.len()));
    }

    let m = samples.len();
    // Column-major design matrix.
    let mut a: [Vec<f64>; 3] = [vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut b: Vec<f64> = Vec::with_capacity(m);
    for (i, s) in samples.iter().enumerate() {
        let x = s.distance_ft.log10();
        a[0][i] = 1.0;
        a[1][i] = x;
        a[2][i] = x * x;
        b.push(s.level_db);
    }

    let mut r = [[0.0f64; 3]; 3];
    for k in 0..3 {
        let norm = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::RankDeficient(distinct.len()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for col in a.iter_mut().skip(k) {
                reflect(&v, vnorm2, &mut col[k..]);
            }
            reflect(&v, vnorm2, &mut b[k..]);
        }
        for j in k..3 {
            r[k][j] = a[j][k];
        }
    }
    let mut c = [0.0f64; 3];
    for k in (0..3).rev() {
        let tail: f64 = (k + 1..3).map(|j| r[k][j] * c[j]).sum();
        c[k] = (b[k] - tail) / r[k][k];
    }
    let coefficients = Coefficients::new(c[0], c[1], c[2]);
    let sse: f64 = samples
        .iter()
        .map(|s| (coefficients.eval(s.distance_ft) - s.level_db).powi(2))
        .sum();
    Ok(NpdFit {
        coefficients,
        rms_residual: (sse / m as f64).sqrt(),
    })
}

fn reflect(v: &[f64], vnorm2: f64, x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vnorm2;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= f * vi;
    }
}

/// Offsets applied when turning an energy sum into a noise increase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConstants {
    pub cumulative_offset_db: f64,
}

impl Default for NoiseConstants {
    fn default() -> Self {
        NoiseConstants {
            cumulative_offset_db: CUMULATIVE_OFFSET_DB,
        }
    }
}

impl NoiseConstants {
    /// Energy sum of `levels_db` minus the offset and `ambient_db`.
    ///
    /// `None` means no source contributed. Inputs are summed in descending
    /// order so the result does not depend on the caller's ordering.
    pub fn cumulative_increase(&self, levels_db: &[f64], ambient_db: f64) -> Option<f64> {
        energy_sum_db(levels_db).map(|n| n - self.cumulative_offset_db - ambient_db)
    }
}

pub fn cumulative_increase(levels_db: &[f64], ambient_db: f64) -> Option<f64> {
    NoiseConstants::default().cumulative_increase(levels_db, ambient_db)
}

/// `10·log10(Σ 10^(N/10))`, or `None` for an empty input.
pub fn energy_sum_db(levels_db: &[f64]) -> Option<f64> {
    if levels_db.is_empty() {
        return None;
    }
    let mut sorted = levels_db.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let energy: f64 = sorted.iter().map(|n| 10f64.powf(n / 10.0)).sum();
    Some(10.0 * energy.log10())
}

/// Per-zone noise increase for aircraft given as `(zone index, slant distance)`.
pub fn zone_increase_by_index(
    zones: &[NoiseZone],
    aircraft: &[(usize, f64)],
    model: &NpdModel,
    constants: &NoiseConstants,
) -> Result<Vec<Option<f64>>> {
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); zones.len()];
    for &(zone, slant) in aircraft {
        let bucket = levels
            .get_mut(zone)
            .ok_or_else(|| Error::UnknownZone(format!("#{zone}")))?;
        bucket.push(model.flyover_level(slant)?);
    }
    Ok(zones
        .iter()
        .zip(&levels)
        .map(|(z, l)| constants.cumulative_increase(l, z.ambient_db))
        .collect())
}

/// Per-zone noise increase, in `zones` order, for aircraft tagged by zone id.
pub fn zone_noise_report(
    zones: &[NoiseZone],
    aircraft: &[(&str, f64)],
    model: &NpdModel,
) -> Result<Vec<Option<f64>>> {
    let indexed = aircraft
        .iter()
        .map(|&(id, slant)| {
            zones
                .iter()
                .position(|z| z.id == id)
                .map(|i| (i, slant))
                .ok_or_else(|| Error::UnknownZone(id.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    zone_increase_by_index(zones, &indexed, model, &NoiseConstants::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lc(z: f64) -> f64 {
        NpdModel::default().flyover_level(z).unwrap()
    }

    #[test]
    fn golden_levels() {
        assert!((lc(1000.0) - 74.14).abs() < 0.01);
        assert!((lc(3000.0) - 67.57).abs() < 0.01);
        assert_eq!(lc(100.0), lc(200.0));
        assert_eq!(lc(50000.0), lc(20000.0));
    }

    #[test]
    fn nonpositive_distance_is_domain_error() {
        let m = NpdModel::default();
        assert!(matches!(m.flyover_level(0.0), Err(Error::Domain(_))));
        assert!(matches!(m.flyover_level(-5.0), Err(Error::Domain(_))));
        assert!(matches!(m.flyover_level(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn conditions_parse() {
        for c in Condition::ALL {
            assert_eq!(c.to_string().parse::<Condition>().unwrap(), c);
        }
        assert_eq!(
            "Mode L - Centerline".parse::<Condition>().unwrap(),
            Condition::LEVEL_CENTERLINE
        );
        assert!("Mode X - Side".parse::<Condition>().is_err());
    }

    #[test]
    fn cumulative_examples() {
        let single = cumulative_increase(&[74.14], 40.0).unwrap();
        assert!((single - -1.42).abs() < 1e-9);
        let double = cumulative_increase(&[74.14, 74.14], 40.0).unwrap();
        assert!((double - 1.59).abs() < 0.01);
        assert_eq!(cumulative_increase(&[], 40.0), None);
    }

    #[test]
    fn offset_override() {
        let c = NoiseConstants {
            cumulative_offset_db: 0.0,
        };
        assert!((c.cumulative_increase(&[60.0], 10.0).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn zone_report_examples() {
        let zones = vec![
            NoiseZone {
                id: "Z1".into(),
                members: vec![],
                ambient_db: 40.0,
            },
            NoiseZone {
                id: "Z2".into(),
                members: vec![],
                ambient_db: 40.0,
            },
        ];
        let m = NpdModel::default();
        let r = zone_noise_report(&zones, &[("Z1", 1000.0)], &m).unwrap();
        assert!((r[0].unwrap() - -1.42).abs() < 0.01);
        assert_eq!(r[1], None);

        assert_eq!(
            zone_noise_report(&zones, &[], &m).unwrap(),
            vec![None, None]
        );

        let r = zone_noise_report(&zones, &[("Z1", 1800.0), ("Z2", 1800.0)], &m).unwrap();
        assert_eq!(r[0], r[1]);

        assert!(matches!(
            zone_noise_report(&zones, &[("nope", 1000.0)], &m),
            Err(Error::UnknownZone(_))
        ));
    }

    #[test]
    fn fit_three_points_interpolates() {
        let c = Coefficients::new(50.0, 10.0, -3.0);
        let samples: Vec<NoiseSample> = [300.0, 3000.0, 15000.0]
            .iter()
            .map(|&d| NoiseSample {
                distance_ft: d,
                level_db: c.eval(d),
            })
            .collect();
        let fit = fit_npd(&samples).unwrap();
        assert!((fit.coefficients.c0 - 50.0).abs() < 1e-9);
        assert!((fit.coefficients.c1 - 10.0).abs() < 1e-9);
        assert!((fit.coefficients.c2 - -3.0).abs() < 1e-9);
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn fit_rejects_rank_deficient() {
        let s = |d: f64| NoiseSample {
            distance_ft: d,
            level_db: 70.0,
        };
        assert!(matches!(
            fit_npd(&[s(200.0), s(200.0), s(500.0), s(500.0)]),
            Err(Error::RankDeficient(2))
        ));
        assert!(matches!(
            fit_npd(&[s(200.0), s(-1.0), s(5.0)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("npd.json");
        let mut m = NpdModel::default();
        m.set_coefficients(
            Condition::LEVEL_CENTERLINE,
            Coefficients::new(1.0, 2.0, 3.0),
        );
        m.save(&path).unwrap();
        assert_eq!(NpdModel::load(&path).unwrap(), m);
    }

    #[test]
    fn model_file_missing_row_rejected() {
        let mut f = NpdModel::default().to_file();
        f.conditions.pop();
        assert!(f.into_model().unwrap_err().to_string().contains("A-Side"));
    }
}
