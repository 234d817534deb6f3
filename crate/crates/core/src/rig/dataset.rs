use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::raster::label_frame;
use super::{rasterize_ground_truth, render_scene, GroundTruthMaps, RasterConfig, RigGeometry, SceneSpec, SourceClass, SourceSpec};
use crate::distill::{self, diff_fraction, masked_labels, mode_background, soundmaking_mask};
use crate::dsp::{write_bsna, AudioFile, Waveform};
use crate::error::{Error, Result};
use crate::formats::{write_bsnt, KvMap, TensorFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub num_scenes: usize,
    pub seed: u64,
    pub duration: f64,
    pub sample_rate: u32,
    pub raster: RasterConfig,
    /// Gap between the labelled frame and the flow target frame, seconds.
    pub flow_dt: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub min_sources: usize,
    pub max_sources: usize,
    pub distance_range: (f64, f64),
    pub angular_speed_range: (f64, f64),
    pub max_radial_speed: f64,
    pub gain_range: (f64, f64),
    pub noise_floor: f64,
    pub energy_threshold: f64,
    pub min_diff_fraction: f64,
    /// Span of the surrounding video, seconds, over which the mode
    /// background is taken.
    pub bg_window: f64,
    pub bg_frames: usize,
    pub geometry: RigGeometry,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_scenes: 64,
            seed: 0,
            duration: 1.0,
            sample_rate: 16000,
            raster: RasterConfig::default(),
            flow_dt: 0.25,
            train_fraction: 0.8,
            val_fraction: 0.1,
            min_sources: 1,
            max_sources: 2,
            distance_range: (1.5, 5.0),
            angular_speed_range: (0.2, 0.6),
            max_radial_speed: 0.5,
            gain_range: (0.7, 1.3),
            noise_floor: 0.001,
            energy_threshold: distill::ENERGY_THRESHOLD,
            min_diff_fraction: distill::MIN_DIFF_FRACTION,
            bg_window: 20.0,
            bg_frames: 21,
            geometry: RigGeometry::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "num_scenes", "seed", "duration", "sample_rate", "grid_height", "grid_width", "bg_depth",
    "flow_dt", "train_fraction", "val_fraction", "min_sources", "max_sources", "min_distance",
    "max_distance", "min_angular_speed", "max_angular_speed", "max_radial_speed", "min_gain",
    "max_gain", "noise_floor", "energy_threshold", "min_diff_fraction", "bg_window", "bg_frames",
    "head_radius", "speed_of_sound",
];

impl DatasetConfig {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_known(KEYS)?;
        let d = DatasetConfig::default();
        let cfg = DatasetConfig {
            num_scenes: kv.parse_or("num_scenes", d.num_scenes)?,
            seed: kv.parse_or("seed", d.seed)?,
            duration: kv.parse_or("duration", d.duration)?,
            sample_rate: kv.parse_or("sample_rate", d.sample_rate)?,
            raster: RasterConfig {
                height: kv.parse_or("grid_height", d.raster.height)?,
                width: kv.parse_or("grid_width", d.raster.width)?,
                bg_depth: kv.parse_or("bg_depth", d.raster.bg_depth)?,
            },
            flow_dt: kv.parse_or("flow_dt", d.flow_dt)?,
            train_fraction: kv.parse_or("train_fraction", d.train_fraction)?,
            val_fraction: kv.parse_or("val_fraction", d.val_fraction)?,
            min_sources: kv.parse_or("min_sources", d.min_sources)?,
            max_sources: kv.parse_or("max_sources", d.max_sources)?,
            distance_range: (
                kv.parse_or("min_distance", d.distance_range.0)?,
                kv.parse_or("max_distance", d.distance_range.1)?,
            ),
            angular_speed_range: (
                kv.parse_or("min_angular_speed", d.angular_speed_range.0)?,
                kv.parse_or("max_angular_speed", d.angular_speed_range.1)?,
            ),
            max_radial_speed: kv.parse_or("max_radial_speed", d.max_radial_speed)?,
            gain_range: (kv.parse_or("min_gain", d.gain_range.0)?, kv.parse_or("max_gain", d.gain_range.1)?),
            noise_floor: kv.parse_or("noise_floor", d.noise_floor)?,
            energy_threshold: kv.parse_or("energy_threshold", d.energy_threshold)?,
            min_diff_fraction: kv.parse_or("min_diff_fraction", d.min_diff_fraction)?,
            bg_window: kv.parse_or("bg_window", d.bg_window)?,
            bg_frames: kv.parse_or("bg_frames", d.bg_frames)?,
            geometry: RigGeometry {
                head_radius: kv.parse_or("head_radius", d.geometry.head_radius)?,
                speed_of_sound: kv.parse_or("speed_of_sound", d.geometry.speed_of_sound)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.raster.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_scenes == 0 {
            return bad("empty dataset");
        }
        if !(self.duration > 0.0) || self.sample_rate == 0 {
            return bad("duration and sample rate must be positive");
        }
        if !(self.flow_dt > 0.0 && self.duration / 2.0 + self.flow_dt <= self.duration) {
            return bad("flow_dt must fit after the middle of the clip");
        }
        if !(self.train_fraction >= 0.0 && self.val_fraction >= 0.0 && self.train_fraction + self.val_fraction <= 1.0) {
            return bad("split fractions must be non-negative and sum to at most 1");
        }
        if self.min_sources > self.max_sources || self.max_sources > 4 {
            return bad("source counts must satisfy min <= max <= 4");
        }
        let (dmin, dmax) = self.distance_range;
        if !(dmin <= dmax && dmin - self.max_radial_speed * self.duration >= 1.0) {
            return bad("sources must stay at least 1 m away over the clip");
        }
        if !(self.angular_speed_range.0 <= self.angular_speed_range.1 && self.gain_range.0 <= self.gain_range.1) {
            return bad("ranges must be ordered");
        }
        if self.bg_frames == 0 || !(self.bg_window >= 0.0) {
            return bad("background needs at least one frame");
        }
        Ok(())
    }

    pub fn t_mid(&self) -> f64 {
        self.duration / 2.0
    }

    /// Split of the `i`-th scene: fractions are applied in id order.
    pub fn split_of(&self, i: usize) -> Split {
        let n = self.num_scenes as f64;
        let n_train = (n * self.train_fraction).round() as usize;
        let n_val = (n * self.val_fraction).round() as usize;
        if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    }

    fn draw_scene(&self, rng: &mut ChaCha8Rng) -> SceneSpec {
        let count = rng.gen_range(self.min_sources..=self.max_sources);
        let sources = (0..count)
            .map(|_| {
                let class = SourceClass::ALL[rng.gen_range(0..3)];
                let speed = rng.gen_range(self.angular_speed_range.0..=self.angular_speed_range.1);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                SourceSpec {
                    class,
                    azimuth0: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                    distance0: rng.gen_range(self.distance_range.0..=self.distance_range.1),
                    angular_velocity: sign * speed,
                    radial_velocity: rng.gen_range(-self.max_radial_speed..=self.max_radial_speed),
                    timbre_seed: rng.gen(),
                    base_gain: rng.gen_range(self.gain_range.0..=self.gain_range.1),
                }
            })
            .collect();
        SceneSpec {
            sources,
            duration: self.duration,
            sample_rate: self.sample_rate,
            noise_floor: self.noise_floor,
            rng_seed: rng.gen(),
        }
    }

    /// Background labels: mode over frames spread across the surrounding
    /// window, with each source held at its mid-clip range.
    pub fn background_labels(&self, scene: &SceneSpec) -> Result<Array2<u8>> {
        let t_mid = self.t_mid();
        let mut held = scene.clone();
        for s in held.sources.iter_mut() {
            s.distance0 = s.distance(t_mid);
            s.radial_velocity = 0.0;
            s.azimuth0 = s.azimuth(t_mid);
        }
        let k = self.bg_frames;
        let frames: Vec<Array2<u8>> = (0..k)
            .map(|j| {
                let off = if k == 1 { 0.0 } else { self.bg_window * (j as f64 / (k - 1) as f64 - 0.5) };
                label_frame(&held, off, &self.raster)
            })
            .collect();
        mode_background(&frames)
    }
}

/// A rendered, labelled scene ready to be written.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scene: SceneSpec,
    pub audio: Vec<Waveform>,
    pub maps: GroundTruthMaps,
}

/// Draws scenes for index `i` until one passes sample selection.
pub fn sample_scene(cfg: &DatasetConfig, i: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let t_mid = cfg.t_mid();
    for _ in 0..200 {
        let scene = cfg.draw_scene(&mut rng);
        let mut maps = rasterize_ground_truth(&scene, t_mid, t_mid + cfg.flow_dt, &cfg.raster)?;
        let bg = cfg.background_labels(&scene)?;
        if diff_fraction(&maps.labels, &bg) < cfg.min_diff_fraction {
            continue;
        }
        let audio = render_scene(&scene, &cfg.geometry)?;
        if !distill::select_sample(&audio, &maps.labels, &bg, cfg.energy_threshold, cfg.min_diff_fraction) {
            continue;
        }
        let mask = soundmaking_mask(&maps.labels, &bg, &[1, 2, 3])?;
        maps.labels = masked_labels(&maps.labels, &mask);
        return Ok(Sample { scene, audio, maps });
    }
    Err(Error::Config(format!(
        "scene {i}: no draw passed sample selection in 200 attempts"
    )))
}

pub fn sample_id(i: usize) -> String {
    format!("{i:05}")
}

fn write_sample(dir: &Path, s: &Sample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_bsna(&dir.join("audio.bsna"), &AudioFile::from_waveforms(&s.audio)?)?;
    let (h, w) = s.maps.labels.dim();
    let labels: Vec<f32> = s.maps.labels.iter().map(|&l| l as f32).collect();
    write_bsnt(&dir.join("labels.bsnt"), &TensorFile::new(&[h, w], labels)?)?;
    let depth: Vec<f64> = s.maps.depth.iter().copied().collect();
    write_bsnt(&dir.join("depth.bsnt"), &TensorFile::from_f64(&[h, w], &depth)?)?;
    let flow: Vec<f64> = s.maps.flow.iter().copied().collect();
    write_bsnt(&dir.join("flow.bsnt"), &TensorFile::from_f64(&[h, w, 2], &flow)?)?;
    let path = dir.join("scene.txt");
    fs::write(&path, s.scene.to_kv().to_text()).map_err(|e| Error::io(&path, e))
}

/// Renders `cfg.num_scenes` samples into `out_dir` and writes
/// `manifest.txt` (`id<TAB>split` per line).
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    (0..cfg.num_scenes)
        .into_par_iter()
        .try_for_each(|i| write_sample(&out_dir.join(sample_id(i)), &sample_scene(cfg, i)?))?;
    let entries: Vec<ManifestEntry> = (0..cfg.num_scenes)
        .map(|i| ManifestEntry {
            id: sample_id(i),
            split: cfg.split_of(i),
        })
        .collect();
    let text: String = entries.iter().map(|e| format!("{}\t{}\n", e.id, e.split)).collect();
    let path = out_dir.join("manifest.txt");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (id, split) = l
                .split_once('\t')
                .ok_or_else(|| Error::format(path, format!("bad manifest line {l:?}")))?;
            Ok(ManifestEntry {
                id: id.to_string(),
                split: split.trim().parse()?,
            })
        })
        .collect()
}
