//! Synthetic city-like scenarios: one three-sector base station, UEs with
//! ray lists and LOS labels, plus the JSON file format shared with imported
//! ray-traced data.
//!
//! # Coordinates and angle convention
//!
//! Positions are meters in a right-handed frame with `z` up. The base-station
//! array sits at `bs_position + (0, 0, bs_height)` and UEs stand at
//! `bs_position.z + ue_height`. Bearings are measured counter-clockwise from
//! `+x`.
//!
//! Departure angles of a ray leaving the array towards point `p` are
//!
//! * azimuth: the horizontal bearing of `p`, wrapped into `[-180, 180)`;
//! * elevation: `90° − |δ − downtilt|`, where `δ` is the depression angle of
//!   `p` below the array's horizontal plane.
//!
//! A direction on the downtilted boresight therefore has elevation 90°, so
//! its `x`/`y` direction cosines are `(cos β, sin β)`, the same direction the
//! sector codebook's `φ = 0` beams point at. The 8×8×1 panel has no aperture
//! along `z` and cannot tell directions mirrored about the boresight apart,
//! which is why the offset enters through its magnitude.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{OfdmConfig, RayPath};
use crate::codebook::SectorId;
use crate::error::{Error, Result};
use crate::geometry::{wrap_degrees, AnglePair, UpaGeometry};
use crate::rng::{stream_rng, STREAM_REFLECTORS};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Axis-aligned rectangle in the ground plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Area {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x_min + dx, self.x_max + dx, self.y_min + dy, self.y_max + dy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub carrier_hz: f64,
    /// Ground point of the base-station site.
    pub bs_position: [f64; 3],
    pub bs_height: f64,
    pub downtilt_deg: f64,
    pub ue_height: f64,
    pub geometry: UpaGeometry,
    pub ofdm: OfdmConfig,
    pub ue_count: usize,
    pub los_ratio_target: f64,
    pub area: Area,
    pub max_paths: usize,
    pub reflector_count: usize,
    /// UEs and reflectors closer than this to the site (horizontally) are redrawn.
    pub min_distance_m: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 3.5e9,
            bs_position: [0.0, 0.0, 0.0],
            bs_height: 20.0,
            downtilt_deg: 20.0,
            ue_height: 1.5,
            geometry: UpaGeometry::default(),
            ofdm: OfdmConfig::default(),
            ue_count: 2000,
            los_ratio_target: 0.6884,
            area: Area::new(-250.0, 250.0, -250.0, 250.0),
            max_paths: 4,
            reflector_count: 32,
            min_distance_m: 5.0,
            seed: 42,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.ue_count == 0 {
            return bad("ue_count must be ≥ 1".into());
        }
        if !(0.0..=1.0).contains(&self.los_ratio_target) {
            return bad(format!("los_ratio_target {} outside [0, 1]", self.los_ratio_target));
        }
        if self.max_paths == 0 {
            return bad("max_paths must be ≥ 1".into());
        }
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return bad(format!("carrier frequency {} must be positive", self.carrier_hz));
        }
        if !(self.bs_height > self.ue_height) {
            return bad("base station must be higher than the UEs".into());
        }
        if !(self.area.area() > 0.0) {
            return bad("UE area has zero size".into());
        }
        if self.los_ratio_target < 1.0 && self.reflector_count == 0 {
            return bad("NLOS UEs need at least one reflector".into());
        }
        if !(self.min_distance_m >= 0.0) {
            return bad("min_distance_m must be ≥ 0".into());
        }
        Ok(())
    }

    /// Position of the array phase center.
    pub fn array_position(&self) -> [f64; 3] {
        let [x, y, z] = self.bs_position;
        [x, y, z + self.bs_height]
    }

    fn ue_z(&self) -> f64 {
        self.bs_position[2] + self.ue_height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeRecord {
    pub id: u32,
    pub position: [f64; 3],
    pub sector: SectorId,
    pub rays: Vec<RayPath>,
    pub is_los: bool,
}

impl UeRecord {
    pub fn los_ray(&self) -> Option<&RayPath> {
        self.rays.iter().find(|r| r.is_los)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ues: Vec<UeRecord>,
}

impl Scenario {
    pub fn los_fraction(&self) -> f64 {
        if self.ues.is_empty() {
            return 0.0;
        }
        self.ues.iter().filter(|u| u.is_los).count() as f64 / self.ues.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&ScenarioFile::from(self))
            .map_err(|e| Error::Invalid(format!("serializing scenario: {e}")))
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        file.into_scenario(source_name)
    }

    /// SHA-256 of the canonical JSON text, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }
}

/// Horizontal bearing of `to` seen from `from`, degrees in `[-180, 180)`.
pub fn bearing_deg(from: [f64; 3], to: [f64; 3]) -> f64 {
    wrap_degrees((to[1] - from[1]).atan2(to[0] - from[0]).to_degrees())
}

/// Sector covering a horizontal bearing: `[−30, 90)` → 1, `[90, 210)` → 2,
/// `[210, 330)` → 3, taken modulo 360.
pub fn sector_for_bearing(bearing_deg: f64) -> SectorId {
    let b = (bearing_deg + 30.0).rem_euclid(360.0) - 30.0;
    let id = if b < 90.0 {
        1
    } else if b < 210.0 {
        2
    } else {
        3
    };
    SectorId::new(id).expect("ids 1..=3 are valid")
}

pub fn assign_sector(position: [f64; 3], bs_position: [f64; 3]) -> Result<SectorId> {
    let dx = position[0] - bs_position[0];
    let dy = position[1] - bs_position[1];
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::InvalidArgument(
            "UE is directly above or below the base station".into(),
        ));
    }
    Ok(sector_for_bearing(bearing_deg(bs_position, position)))
}

/// Departure angles from the array at `from` towards `to` (see module docs).
pub fn departure_angles(from: [f64; 3], to: [f64; 3], downtilt_deg: f64) -> Result<AnglePair> {
    let dx = to[0] - from[0];
    let dy = to[1] - from[1];
    let horizontal = dx.hypot(dy);
    if horizontal == 0.0 {
        return Err(Error::InvalidArgument("target is directly above or below the array".into()));
    }
    let depression = (from[2] - to[2]).atan2(horizontal).to_degrees();
    let elevation = 90.0 - (depression - downtilt_deg).abs();
    AnglePair::new(bearing_deg(from, to), elevation.max(-90.0))
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Free-space path gain in dB (negative path loss).
pub fn free_space_gain_db(distance_m: f64, carrier_hz: f64) -> f64 {
    -20.0 * (4.0 * std::f64::consts::PI * distance_m * carrier_hz / SPEED_OF_LIGHT).log10()
}

fn sample_ground_point<R: Rng>(rng: &mut R, config: &ScenarioConfig, z: f64) -> [f64; 3] {
    let a = &config.area;
    let [bx, by, _] = config.bs_position;
    loop {
        let x = rng.random_range(a.x_min..a.x_max);
        let y = rng.random_range(a.y_min..a.y_max);
        if (x - bx).hypot(y - by) > config.min_distance_m.max(f64::MIN_POSITIVE) {
            return [x, y, z];
        }
    }
}

/// Generates a scenario; UE `i` draws from its own stream so the result does
/// not depend on generation order.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let array = config.array_position();
    let mut rng = stream_rng(config.seed, STREAM_REFLECTORS);
    let reflectors: Vec<[f64; 3]> = (0..config.reflector_count)
        .map(|_| {
            let z = rng.random_range(config.bs_position[2]..config.bs_position[2] + config.bs_height);
            sample_ground_point(&mut rng, config, z)
        })
        .collect();

    let ues = (0..config.ue_count)
        .map(|i| generate_ue(config, &reflectors, array, i as u32))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        config: config.clone(),
        ues,
    })
}

fn generate_ue(
    config: &ScenarioConfig,
    reflectors: &[[f64; 3]],
    array: [f64; 3],
    id: u32,
) -> Result<UeRecord> {
    let mut rng = stream_rng(config.seed, id as u64);
    let position = sample_ground_point(&mut rng, config, config.ue_z());
    let sector = assign_sector(position, config.bs_position)?;
    let is_los = rng.random_bool(config.los_ratio_target);

    let mut rays = Vec::with_capacity(config.max_paths);
    if is_los {
        let d = distance(array, position);
        rays.push(RayPath::new(
            free_space_gain_db(d, config.carrier_hz),
            rng.random_range(0.0..std::f64::consts::TAU),
            d / SPEED_OF_LIGHT,
            departure_angles(array, position, config.downtilt_deg)?,
            true,
        )?);
    }

    let wanted = if is_los {
        config.max_paths - 1
    } else {
        config.max_paths.saturating_sub(1).max(1)
    };
    // Shortest bounce paths first; shared reflectors give neighbouring UEs
    // spatially coherent multipath.
    let mut bounces: Vec<(f64, usize)> = reflectors
        .iter()
        .enumerate()
        .map(|(j, r)| (distance(array, *r) + distance(*r, position), j))
        .collect();
    bounces.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(length, j) in bounces.iter().take(wanted) {
        let loss = rng.random_range(6.0..20.0);
        rays.push(RayPath::new(
            free_space_gain_db(length, config.carrier_hz) - loss,
            rng.random_range(0.0..std::f64::consts::TAU),
            length / SPEED_OF_LIGHT,
            departure_angles(array, reflectors[j], config.downtilt_deg)?,
            false,
        )?);
    }

    Ok(UeRecord {
        id,
        position,
        sector,
        rays,
        is_los,
    })
}

// ---------------------------------------------------------------------------
// File format

#[derive(Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(default)]
    config: ScenarioConfig,
    ues: Vec<UeFileRecord>,
}

#[derive(Serialize, Deserialize)]
struct UeFileRecord {
    id: u32,
    position: [f64; 3],
    sector: u8,
    #[serde(default)]
    rays: Vec<RayFileRecord>,
}

#[derive(Serialize, Deserialize)]
struct RayFileRecord {
    power_db: f64,
    phase_rad: f64,
    delay_s: f64,
    az_deg: f64,
    el_deg: f64,
    is_los: bool,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            config: s.config.clone(),
            ues: s
                .ues
                .iter()
                .map(|u| UeFileRecord {
                    id: u.id,
                    position: u.position,
                    sector: u.sector.get(),
                    rays: u
                        .rays
                        .iter()
                        .map(|r| RayFileRecord {
                            power_db: r.power_db,
                            phase_rad: r.phase_rad,
                            delay_s: r.delay_s,
                            az_deg: r.departure.azimuth(),
                            el_deg: r.departure.elevation(),
                            is_los: r.is_los,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl ScenarioFile {
    fn into_scenario(self, source_name: &str) -> Result<Scenario> {
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            message,
        };
        let mut seen = std::collections::BTreeSet::new();
        let mut ues = Vec::with_capacity(self.ues.len());
        for (n, u) in self.ues.into_iter().enumerate() {
            let at = format!("ues[{n}] (ue id {})", u.id);
            if !seen.insert(u.id) {
                return Err(err(format!("{at}: duplicate ue id")));
            }
            if u.rays.is_empty() {
                return Err(err(format!("{at}: field `rays` is missing or empty")));
            }
            let sector = SectorId::new(u.sector).map_err(|e| err(format!("{at}: field `sector`: {e}")))?;
            let expected = assign_sector(u.position, self.config.bs_position)
                .map_err(|e| err(format!("{at}: field `position`: {e}")))?;
            if expected != sector {
                return Err(err(format!(
                    "{at}: field `sector` is {sector} but the position lies in sector {expected}"
                )));
            }
            let mut rays = Vec::with_capacity(u.rays.len());
            for (k, r) in u.rays.into_iter().enumerate() {
                let ray = AnglePair::new(r.az_deg, r.el_deg)
                    .and_then(|dep| RayPath::new(r.power_db, r.phase_rad, r.delay_s, dep, r.is_los))
                    .map_err(|e| err(format!("{at}: rays[{k}]: {e}")))?;
                rays.push(ray);
            }
            let los_count = rays.iter().filter(|r| r.is_los).count();
            if los_count > 1 {
                return Err(err(format!("{at}: {los_count} rays flagged LOS, at most one allowed")));
            }
            ues.push(UeRecord {
                id: u.id,
                position: u.position,
                sector,
                is_los: los_count == 1,
                rays,
            });
        }
        self.config.validate().map_err(|e| err(format!("config: {e}")))?;
        Ok(Scenario {
            config: self.config,
            ues,
        })
    }
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = scenario.to_json()?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synthesize_channel;

    fn small_config(ue_count: usize) -> ScenarioConfig {
        ScenarioConfig {
            ue_count,
            ofdm: OfdmConfig::full(16, 10e6).unwrap(),
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn sector_examples() {
        assert_eq!(sector_for_bearing(0.0).get(), 1);
        assert_eq!(sector_for_bearing(90.0).get(), 2);
        assert_eq!(sector_for_bearing(215.0).get(), 3);
        assert_eq!(sector_for_bearing(-30.0).get(), 1);
        assert_eq!(sector_for_bearing(-31.0).get(), 3);
        assert_eq!(sector_for_bearing(330.0).get(), 1);
        assert_eq!(sector_for_bearing(209.999).get(), 2);
        let bs = [0.0, 0.0, 0.0];
        assert_eq!(assign_sector([0.0, 10.0, 1.5], bs).unwrap().get(), 2);
        assert_eq!(assign_sector([-10.0, -0.1, 1.5], bs).unwrap().get(), 2);
        assert_eq!(assign_sector([-10.0, -10.0, 1.5], bs).unwrap().get(), 3);
        assert!(assign_sector([0.0, 0.0, 1.5], bs).is_err());
    }

    #[test]
    fn sectors_partition_the_circle() {
        for tenth in 0..3600 {
            let b = tenth as f64 / 10.0;
            let hits = [(-30.0, 90.0), (90.0, 210.0), (210.0, 330.0)]
                .iter()
                .filter(|(lo, hi)| {
                    let x = (b - lo).rem_euclid(360.0);
                    x < hi - lo
                })
                .count();
            assert_eq!(hits, 1, "bearing {b}");
            let s = sector_for_bearing(b);
            let lo = s.theta_min();
            assert!((b - lo).rem_euclid(360.0) < 120.0);
        }
    }

    #[test]
    fn full_los_single_path() {
        let cfg = ScenarioConfig {
            los_ratio_target: 1.0,
            max_paths: 1,
            ..small_config(50)
        };
        let s = generate_scenario(&cfg).unwrap();
        assert!(s.ues.iter().all(|u| u.rays.len() == 1 && u.rays[0].is_los && u.is_los));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config(20);
        let a = generate_scenario(&cfg).unwrap().to_json().unwrap();
        let b = generate_scenario(&cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        let other = ScenarioConfig { seed: 7, ..cfg };
        assert_ne!(a, generate_scenario(&other).unwrap().to_json().unwrap());
    }

    #[test]
    fn los_fraction_tracks_target() {
        let cfg = ScenarioConfig {
            los_ratio_target: 0.6884,
            ..small_config(2000)
        };
        let s = generate_scenario(&cfg).unwrap();
        assert!((s.los_fraction() - 0.6884).abs() < 0.02, "{}", s.los_fraction());
    }

    #[test]
    fn ue_invariants_hold() {
        let s = generate_scenario(&small_config(300)).unwrap();
        for u in &s.ues {
            assert!(!u.rays.is_empty());
            assert!(u.rays.len() <= s.config.max_paths);
            assert!(u.rays.iter().filter(|r| r.is_los).count() <= 1);
            assert_eq!(u.is_los, u.los_ray().is_some());
            assert_eq!(u.sector, assign_sector(u.position, s.config.bs_position).unwrap());
        }
    }

    #[test]
    fn los_geometry_is_exact() {
        let s = generate_scenario(&small_config(300)).unwrap();
        let bs = s.config.array_position();
        for u in s.ues.iter().filter(|u| u.is_los) {
            let ray = u.los_ray().unwrap();
            // Independent route: unit direction vector, then asin/atan2.
            let d = [u.position[0] - bs[0], u.position[1] - bs[1], u.position[2] - bs[2]];
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let depression = (-d[2] / len).asin().to_degrees();
            let mut az = d[1].atan2(d[0]).to_degrees();
            if az >= 180.0 {
                az -= 360.0;
            }
            let el = 90.0 - (depression - s.config.downtilt_deg).abs();
            assert!((ray.departure.azimuth() - az).abs() < 1e-9);
            assert!((ray.departure.elevation() - el).abs() < 1e-9);
            assert!((ray.delay_s * SPEED_OF_LIGHT - len).abs() < 1e-6);
        }
    }

    #[test]
    fn nlos_rays_are_weaker_than_free_space() {
        let s = generate_scenario(&small_config(100)).unwrap();
        for u in &s.ues {
            for r in u.rays.iter().filter(|r| !r.is_los) {
                let length = r.delay_s * SPEED_OF_LIGHT;
                let fs = free_space_gain_db(length, s.config.carrier_hz);
                let loss = fs - r.power_db;
                assert!((6.0..20.0 + 1e-9).contains(&loss), "reflection loss {loss}");
            }
        }
    }

    #[test]
    fn zero_area_is_rejected() {
        let cfg = ScenarioConfig {
            area: Area::new(0.0, 0.0, -10.0, 10.0),
            ..small_config(5)
        };
        assert!(generate_scenario(&cfg).is_err());
    }

    #[test]
    fn file_roundtrip_is_lossless() {
        let s = generate_scenario(&small_config(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        save_scenario(&s, &path).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn missing_rays_names_the_ue() {
        let text = r#"{"ues":[{"id":17,"position":[10.0,1.0,1.5],"sector":1}]}"#;
        let e = Scenario::from_json(text, "inline").unwrap_err().to_string();
        assert!(e.contains("ue id 17") && e.contains("rays"), "{e}");
    }

    #[test]
    fn malformed_json_reports_position() {
        let e = Scenario::from_json("{\"ues\": [ {\"id\": 1,, } ]}", "bad.json")
            .unwrap_err()
            .to_string();
        assert!(e.contains("bad.json") && e.contains("line 1"), "{e}");
    }

    #[test]
    fn wrong_sector_is_rejected() {
        let text = r#"{"ues":[{"id":3,"position":[10.0,1.0,1.5],"sector":2,
            "rays":[{"power_db":-80,"phase_rad":0,"delay_s":1e-7,"az_deg":5,"el_deg":80,"is_los":true}]}]}"#;
        let e = Scenario::from_json(text, "inline").unwrap_err().to_string();
        assert!(e.contains("ue id 3") && e.contains("sector"), "{e}");
    }

    #[test]
    fn minimal_hand_written_scenario_synthesizes() {
        let text = r#"{
            "config": {"ofdm": {"num_subcarriers": 8, "bandwidth_hz": 1e7}},
            "ues": [{"id": 0, "position": [50.0, 20.0, 1.5], "sector": 1,
                     "rays": [{"power_db": -90.0, "phase_rad": 0.5, "delay_s": 1.8e-7,
                               "az_deg": 21.8, "el_deg": 85.0, "is_los": true}]}]
        }"#;
        let s = Scenario::from_json(text, "inline").unwrap();
        assert!(s.ues[0].is_los);
        let h = synthesize_channel(&s.ues[0].rays, &s.config.geometry, &s.config.ofdm).unwrap();
        assert_eq!((h.rows(), h.cols()), (8, 64));
        // |coefficient|² summed over subcarriers equals ρ per element
        let rho = 10f64.powf(-9.0);
        assert!((h.energy() - rho * 64.0).abs() < 1e-20);
    }
}
