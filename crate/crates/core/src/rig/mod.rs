//! Synthetic eight-microphone rig: four binaural pairs facing 0°, 90°, 180°
//! and 270°, moving sound sources, and panoramic ground-truth maps.
//!
//! Azimuth is measured counter-clockwise from the front-facing direction, so
//! the left ear of a pair facing `α` points at `α + 90°`.

mod dataset;
mod raster;
mod render;

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

pub use dataset::{generate_dataset, read_manifest, sample_id, sample_scene, DatasetConfig, ManifestEntry, Sample, Split};
pub use raster::{label_frame, rasterize_ground_truth, GroundTruthMaps, RasterConfig};
pub use render::{emitter, render_scene, Emitter};

use crate::error::{Error, Result};

/// Rig channel ids `(left, right)` of the pairs facing 0°, 90°, 180°, 270°.
pub const PAIR_CHANNELS: [(u8, u8); 4] = [(3, 8), (1, 6), (4, 7), (2, 5)];

/// Facing direction of pair `i`, radians.
pub fn pair_azimuth(i: usize) -> f64 {
    i as f64 * FRAC_PI_2
}

/// Index of the pair holding channel `id`, and whether it is the left ear.
pub fn channel_pair(id: u8) -> Option<(usize, bool)> {
    PAIR_CHANNELS.iter().enumerate().find_map(|(i, &(l, r))| {
        if id == l {
            Some((i, true))
        } else if id == r {
            Some((i, false))
        } else {
            None
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigGeometry {
    /// Meters.
    pub head_radius: f64,
    /// Meters per second.
    pub speed_of_sound: f64,
}

impl Default for RigGeometry {
    fn default() -> Self {
        RigGeometry {
            head_radius: 0.0875,
            speed_of_sound: 343.0,
        }
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Lateral angle in `[-π/2, π/2]`: positive on the left.
pub fn lateral_angle(relative_azimuth: f64) -> f64 {
    relative_azimuth.sin().asin()
}

/// Spherical-head interaural time difference for a source at
/// `relative_azimuth` from the facing direction. Positive when the left ear
/// leads.
pub fn itd(relative_azimuth: f64, g: &RigGeometry) -> f64 {
    let lat = lateral_angle(relative_azimuth);
    let th = lat.abs();
    (g.head_radius / g.speed_of_sound) * (th + th.sin()) * lat.signum()
}

/// Broadband gain on the ear facing away from the source.
pub fn head_shadow(relative_azimuth: f64) -> f64 {
    1.0 - 0.4 * lateral_angle(relative_azimuth).sin().abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceClass {
    Car = 1,
    Tram = 2,
    Motorcycle = 3,
}

impl SourceClass {
    pub const ALL: [SourceClass; 3] = [SourceClass::Car, SourceClass::Tram, SourceClass::Motorcycle];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceClass::Car => "car",
            SourceClass::Tram => "tram",
            SourceClass::Motorcycle => "motorcycle",
        }
    }

    /// Visual extent (width, height) in meters.
    pub fn size(self) -> (f64, f64) {
        match self {
            SourceClass::Car => (4.5, 2.0),
            SourceClass::Tram => (7.0, 3.5),
            SourceClass::Motorcycle => (2.5, 1.8),
        }
    }
}

impl fmt::Display for SourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown source class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub class: SourceClass,
    /// Radians at t = 0.
    pub azimuth0: f64,
    /// Meters at t = 0.
    pub distance0: f64,
    /// Radians per second.
    pub angular_velocity: f64,
    /// Meters per second.
    pub radial_velocity: f64,
    pub timbre_seed: u64,
    pub base_gain: f64,
}

impl SourceSpec {
    pub fn azimuth(&self, t: f64) -> f64 {
        self.azimuth0 + self.angular_velocity * t
    }

    pub fn distance(&self, t: f64) -> f64 {
        self.distance0 + self.radial_velocity * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub sources: Vec<SourceSpec>,
    /// Seconds.
    pub duration: f64,
    pub sample_rate: u32,
    /// RMS of the additive sensor noise.
    pub noise_floor: f64,
    pub rng_seed: u64,
}

impl SceneSpec {
    pub fn num_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || self.sample_rate == 0 || self.num_samples() == 0 {
            return Err(Error::Config("scene needs a positive duration and rate".into()));
        }
        if self.sources.len() > 4 {
            return Err(Error::Config(format!("{} sources, at most 4", self.sources.len())));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(Error::Config("noise floor must be non-negative".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            // distance is affine in t, so the endpoints bound it
            let dmin = s.distance(0.0).min(s.distance(self.duration));
            if !(dmin >= 1.0) {
                return Err(Error::Geometry(format!(
                    "source {i} comes within {dmin:.3} m of the rig (minimum 1 m)"
                )));
            }
        }
        Ok(())
    }

    /// `key = value` description, one source block per index.
    pub fn to_kv(&self) -> crate::formats::KvMap {
        let mut kv = crate::formats::KvMap::new();
        kv.set("duration", self.duration);
        kv.set("sample_rate", self.sample_rate);
        kv.set("noise_floor", self.noise_floor);
        kv.set("rng_seed", self.rng_seed);
        kv.set("sources", self.sources.len());
        for (i, s) in self.sources.iter().enumerate() {
            kv.set(&format!("source{i}.class"), s.class);
            kv.set(&format!("source{i}.azimuth0"), s.azimuth0);
            kv.set(&format!("source{i}.distance0"), s.distance0);
            kv.set(&format!("source{i}.angular_velocity"), s.angular_velocity);
            kv.set(&format!("source{i}.radial_velocity"), s.radial_velocity);
            kv.set(&format!("source{i}.timbre_seed"), s.timbre_seed);
            kv.set(&format!("source{i}.base_gain"), s.base_gain);
        }
        kv
    }

    pub fn from_kv(kv: &crate::formats::KvMap) -> Result<Self> {
        let n: usize = kv.require("sources")?;
        let sources = (0..n)
            .map(|i| {
                let key = |f: &str| format!("source{i}.{f}");
                Ok(SourceSpec {
                    class: kv.require(&key("class"))?,
                    azimuth0: kv.require(&key("azimuth0"))?,
                    distance0: kv.require(&key("distance0"))?,
                    angular_velocity: kv.require(&key("angular_velocity"))?,
                    radial_velocity: kv.require(&key("radial_velocity"))?,
                    timbre_seed: kv.require(&key("timbre_seed"))?,
                    base_gain: kv.require(&key("base_gain"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(SceneSpec {
            sources,
            duration: kv.require("duration")?,
            sample_rate: kv.require("sample_rate")?,
            noise_floor: kv.require("noise_floor")?,
            rng_seed: kv.require("rng_seed")?,
        })
    }
}

/// Propagation delays (seconds) and gains of one source at time `t` for
/// every rig channel, indexed by `channel id - 1`.
pub fn channel_paths(src: &SourceSpec, t: f64, g: &RigGeometry) -> [(f64, f64); 8] {
    let az = src.azimuth(t);
    let d = src.distance(t);
    let base = d / g.speed_of_sound;
    let amp = src.base_gain / d;
    let mut out = [(0.0, 0.0); 8];
    for (i, &(l, r)) in PAIR_CHANNELS.iter().enumerate() {
        let rel = az - pair_azimuth(i);
        let dt = itd(rel, g);
        let lat = lateral_angle(rel);
        let shadow = head_shadow(rel);
        let (gl, gr) = if lat > 0.0 { (1.0, shadow) } else { (shadow, 1.0) };
        out[l as usize - 1] = (base - dt / 2.0, amp * gl);
        out[r as usize - 1] = (base + dt / 2.0, amp * gr);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn itd_reference_values() {
        let g = RigGeometry::default();
        assert_eq!(itd(0.0, &g), 0.0);
        let expect = 0.0875 / 343.0 * (FRAC_PI_2 + 1.0);
        assert!((itd(FRAC_PI_2, &g) - expect).abs() < 1e-15);
        assert!((expect - 6.56e-4).abs() < 1e-6);
        for th in [0.1, 0.7, 1.3, 2.5, -2.9] {
            assert!((itd(-th, &g) + itd(th, &g)).abs() < 1e-15);
        }
    }

    #[test]
    fn channel_map_is_a_permutation() {
        let mut ids: Vec<u8> = PAIR_CHANNELS.iter().flat_map(|&(l, r)| [l, r]).collect();
        ids.sort();
        assert_eq!(ids, (1..=8).collect::<Vec<_>>());
        assert_eq!(channel_pair(3), Some((0, true)));
        assert_eq!(channel_pair(5), Some((3, false)));
        assert_eq!(channel_pair(9), None);
    }

    #[test]
    fn front_source_paths() {
        let g = RigGeometry::default();
        let src = SourceSpec {
            class: SourceClass::Car,
            azimuth0: 0.0,
            distance0: 2.0,
            angular_velocity: 0.0,
            radial_velocity: 0.0,
            timbre_seed: 0,
            base_gain: 1.0,
        };
        let p = channel_paths(&src, 0.0, &g);
        // front pair (3, 8): equal delays
        assert_eq!(p[2].0, p[7].0);
        // pair (1, 6) faces 90°: source on its right, right ear (6) leads by the full ITD
        let full = itd(FRAC_PI_2, &g);
        assert!(((p[0].0 - p[5].0) - full).abs() < 1e-15);
        assert!((p[0].1 - 0.6 * 0.5).abs() < 1e-12 && (p[5].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scene_kv_round_trip_and_min_distance() {
        let s = SceneSpec {
            sources: vec![SourceSpec {
                class: SourceClass::Tram,
                azimuth0: 1.25,
                distance0: 1.5,
                angular_velocity: -0.3,
                radial_velocity: -0.4,
                timbre_seed: 77,
                base_gain: 0.8,
            }],
            duration: 1.0,
            sample_rate: 16000,
            noise_floor: 0.001,
            rng_seed: 5,
        };
        assert_eq!(SceneSpec::from_kv(&s.to_kv()).unwrap(), s);
        assert!(s.validate().is_ok());
        let mut close = s.clone();
        close.sources[0].radial_velocity = -0.6;
        assert!(matches!(close.validate(), Err(Error::Geometry(_))));
    }
}
