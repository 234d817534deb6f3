use std::fmt;
use std::str::FromStr;

use crate::dsp::{frame_count, StftParams};
use crate::error::{Error, Result};
use crate::formats::KvMap;
use crate::nn::ConvGeometry;
use crate::rig::PAIR_CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderKind {
    Spectrogram,
    Ddsp,
    Combined,
}

impl EncoderKind {
    pub fn uses_spectrogram(self) -> bool {
        matches!(self, EncoderKind::Spectrogram | EncoderKind::Combined)
    }

    pub fn uses_ddsp(self) -> bool {
        matches!(self, EncoderKind::Ddsp | EncoderKind::Combined)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Spectrogram => "spectrogram",
            EncoderKind::Ddsp => "ddsp",
            EncoderKind::Combined => "combined",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectrogram" => Ok(EncoderKind::Spectrogram),
            "ddsp" => Ok(EncoderKind::Ddsp),
            "combined" => Ok(EncoderKind::Combined),
            _ => Err(Error::Config(format!("unknown encoder kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Semantic,
    Depth,
    Motion,
    S3r,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Semantic, Task::Depth, Task::Motion, Task::S3r];

    pub fn letter(self) -> char {
        match self {
            Task::Semantic => 'S',
            Task::Depth => 'D',
            Task::Motion => 'M',
            Task::S3r => 'R',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Semantic => "semantic",
            Task::Depth => "depth",
            Task::Motion => "motion",
            Task::S3r => "s3r",
        }
    }
}

/// A subset of the four tasks. Parses from letters (`SDMR`, `SDM+R`) or
/// comma-separated names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TaskSet(u8);

impl TaskSet {
    pub const SEMANTIC: TaskSet = TaskSet(1);
    pub const ALL: TaskSet = TaskSet(0b1111);

    pub fn of(tasks: &[Task]) -> Self {
        TaskSet(tasks.iter().fold(0, |m, &t| m | 1 << t as u8))
    }

    pub fn contains(self, t: Task) -> bool {
        self.0 & (1 << t as u8) != 0
    }

    pub fn is_subset(self, other: TaskSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Task> {
        Task::ALL.into_iter().filter(move |&t| self.contains(t))
    }
}

impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(Task::letter).collect();
        f.write_str(&s)
    }
}

impl FromStr for TaskSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut tasks = Vec::new();
        let letters = s.chars().all(|c| "SDMR+ ".contains(c));
        if !letters {
            for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
                let t = Task::ALL
                    .into_iter()
                    .find(|t| t.name() == name)
                    .ok_or_else(|| Error::Config(format!("unknown task {name:?}")))?;
                tasks.push(t);
            }
        } else {
            for ch in s.chars().filter(|&c| c != '+' && !c.is_whitespace()) {
                let t = Task::ALL
                    .into_iter()
                    .find(|t| t.letter() == ch)
                    .ok_or_else(|| Error::Config(format!("unknown task letter {ch:?} in {s:?}")))?;
                tasks.push(t);
            }
        }
        let set = TaskSet::of(&tasks);
        if set.is_empty() {
            return Err(Error::Config("empty task set".into()));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdspConfig {
    pub n_mels: usize,
    pub mfcc_coeffs: usize,
    pub gru_units: usize,
    pub z_dim: usize,
    pub mlp_hidden: usize,
    pub mlp_layers: usize,
    pub f0_min: f64,
    pub f0_max: f64,
}

impl Default for DdspConfig {
    fn default() -> Self {
        DdspConfig {
            n_mels: 40,
            mfcc_coeffs: 20,
            gru_units: 64,
            z_dim: 16,
            mlp_hidden: 256,
            mlp_layers: 3,
            f0_min: 40.0,
            f0_max: 1000.0,
        }
    }
}

impl DdspConfig {
    /// Per-frame feature width: f0, loudness, then the MFCCs.
    pub fn frame_features(&self) -> usize {
        2 + self.mfcc_coeffs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub conv_channels: Vec<usize>,
    pub aspp_filters: usize,
    pub decoder_channels: usize,
    pub up_channels: Vec<usize>,
    /// Rig channel ids fed to the encoder.
    pub input_channels: Vec<u8>,
    pub tasks: TaskSet,
    /// Indices into [`PAIR_CHANNELS`] of the pairs the S3R decoder predicts.
    pub s3r_pairs: Vec<usize>,
    pub grid_height: usize,
    pub grid_width: usize,
    pub sample_rate: u32,
    pub clip_samples: usize,
    pub stft: StftParams,
    pub ddsp: DdspConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::Spectrogram,
            conv_channels: vec![16, 32, 64, 64],
            aspp_filters: 64,
            decoder_channels: 64,
            up_channels: vec![64, 32, 16, 8, 8],
            input_channels: vec![3, 8],
            tasks: TaskSet::SEMANTIC,
            s3r_pairs: vec![1],
            grid_height: 32,
            grid_width: 64,
            sample_rate: 16000,
            clip_samples: 16000,
            stft: StftParams::default(),
            ddsp: DdspConfig::default(),
        }
    }
}

pub const ENCODER_GEOMETRY: (usize, usize, usize) = (4, 2, 1);

pub(crate) fn encoder_geometry() -> ConvGeometry {
    let (k, s, p) = ENCODER_GEOMETRY;
    ConvGeometry::new(k, s, p, 1)
}

pub const MODEL_KEYS: &[&str] = &[
    "scale", "encoder", "conv_channels", "aspp_filters", "decoder_channels", "up_channels",
    "input_channels", "tasks", "s3r_pairs", "grid_height", "grid_width", "sample_rate",
    "clip_samples", "window_size", "hop_length", "n_mels", "mfcc_coeffs", "gru_units", "z_dim",
    "mlp_hidden", "mlp_layers", "f0_min", "f0_max",
];

fn parse_pair(s: &str) -> Result<usize> {
    let (l, r) = s
        .split_once('-')
        .ok_or_else(|| Error::Config(format!("pair {s:?} is not of the form left-right")))?;
    let ids: (u8, u8) = (
        l.trim().parse().map_err(|_| Error::Config(format!("bad pair {s:?}")))?,
        r.trim().parse().map_err(|_| Error::Config(format!("bad pair {s:?}")))?,
    );
    PAIR_CHANNELS
        .iter()
        .position(|&p| p == ids)
        .ok_or_else(|| Error::Config(format!("{s} is not a rig pair")))
}

/// Parses `1-6,4-7` into pair indices.
pub fn parse_pairs(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(parse_pair).collect()
}

pub fn format_pairs(pairs: &[usize]) -> String {
    pairs
        .iter()
        .map(|&i| format!("{}-{}", PAIR_CHANNELS[i].0, PAIR_CHANNELS[i].1))
        .collect::<Vec<_>>()
        .join(",")
}

impl ModelConfig {
    /// Paper-sized widths: encoder 64/128/256/512, 512-unit GRU and latent.
    pub fn paper_scale() -> Self {
        ModelConfig {
            conv_channels: vec![64, 128, 256, 512],
            ddsp: DdspConfig {
                gru_units: 512,
                z_dim: 512,
                ..DdspConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = match kv.get("scale").unwrap_or("desk") {
            "desk" => ModelConfig::default(),
            "paper" => ModelConfig::paper_scale(),
            s => return Err(Error::Config(format!("unknown scale {s:?}"))),
        };
        let s3r_pairs = match kv.get("s3r_pairs") {
            Some(s) => parse_pairs(s)?,
            None => d.s3r_pairs.clone(),
        };
        let cfg = ModelConfig {
            encoder: kv.parse_or("encoder", d.encoder)?,
            conv_channels: kv.list_or("conv_channels", d.conv_channels)?,
            aspp_filters: kv.parse_or("aspp_filters", d.aspp_filters)?,
            decoder_channels: kv.parse_or("decoder_channels", d.decoder_channels)?,
            up_channels: kv.list_or("up_channels", d.up_channels)?,
            input_channels: kv.list_or("input_channels", d.input_channels)?,
            tasks: kv.parse_or("tasks", d.tasks)?,
            s3r_pairs,
            grid_height: kv.parse_or("grid_height", d.grid_height)?,
            grid_width: kv.parse_or("grid_width", d.grid_width)?,
            sample_rate: kv.parse_or("sample_rate", d.sample_rate)?,
            clip_samples: kv.parse_or("clip_samples", d.clip_samples)?,
            stft: StftParams::new(
                kv.parse_or("window_size", d.stft.window_size)?,
                kv.parse_or("hop_length", d.stft.hop_length)?,
            )?,
            ddsp: DdspConfig {
                n_mels: kv.parse_or("n_mels", d.ddsp.n_mels)?,
                mfcc_coeffs: kv.parse_or("mfcc_coeffs", d.ddsp.mfcc_coeffs)?,
                gru_units: kv.parse_or("gru_units", d.ddsp.gru_units)?,
                z_dim: kv.parse_or("z_dim", d.ddsp.z_dim)?,
                mlp_hidden: kv.parse_or("mlp_hidden", d.ddsp.mlp_hidden)?,
                mlp_layers: kv.parse_or("mlp_layers", d.ddsp.mlp_layers)?,
                f0_min: kv.parse_or("f0_min", d.ddsp.f0_min)?,
                f0_max: kv.parse_or("f0_max", d.ddsp.f0_max)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvMap {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut kv = KvMap::new();
        kv.set("encoder", self.encoder);
        kv.set("conv_channels", list(&self.conv_channels));
        kv.set("aspp_filters", self.aspp_filters);
        kv.set("decoder_channels", self.decoder_channels);
        kv.set("up_channels", list(&self.up_channels));
        kv.set(
            "input_channels",
            self.input_channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set("tasks", self.tasks);
        kv.set("s3r_pairs", format_pairs(&self.s3r_pairs));
        kv.set("grid_height", self.grid_height);
        kv.set("grid_width", self.grid_width);
        kv.set("sample_rate", self.sample_rate);
        kv.set("clip_samples", self.clip_samples);
        kv.set("window_size", self.stft.window_size);
        kv.set("hop_length", self.stft.hop_length);
        kv.set("n_mels", self.ddsp.n_mels);
        kv.set("mfcc_coeffs", self.ddsp.mfcc_coeffs);
        kv.set("gru_units", self.ddsp.gru_units);
        kv.set("z_dim", self.ddsp.z_dim);
        kv.set("mlp_hidden", self.ddsp.mlp_hidden);
        kv.set("mlp_layers", self.ddsp.mlp_layers);
        kv.set("f0_min", self.ddsp.f0_min);
        kv.set("f0_max", self.ddsp.f0_max);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.conv_channels.len() != 4 || self.conv_channels.contains(&0) {
            return bad(format!("conv_channels needs 4 positive widths, got {:?}", self.conv_channels));
        }
        if self.up_channels.len() != 5 || self.up_channels.contains(&0) {
            return bad(format!("up_channels needs 5 positive widths, got {:?}", self.up_channels));
        }
        if self.aspp_filters == 0 || self.decoder_channels == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.input_channels.is_empty() || self.input_channels.iter().any(|&c| !(1..=8).contains(&c)) {
            return bad(format!("input channels {:?} must be non-empty ids in 1..8", self.input_channels));
        }
        if self.tasks.is_empty() {
            return bad("empty task set".into());
        }
        if self.tasks.contains(Task::S3r) {
            if !(1..=3).contains(&self.s3r_pairs.len()) {
                return bad(format!("S3R predicts 1 to 3 pairs, got {}", self.s3r_pairs.len()));
            }
            if self.s3r_pairs.iter().any(|&p| p == 0 || p >= PAIR_CHANNELS.len()) {
                return bad("S3R output pairs must be rig pairs other than the front pair".into());
            }
            if !self.input_channels.iter().all(|c| [3, 8].contains(c)) {
                return bad("S3R needs its inputs drawn from the front pair (3, 8)".into());
            }
        }
        if self.grid_height < 8 || self.grid_width < 8 {
            return bad(format!("grid {}x{} is below 8x8", self.grid_height, self.grid_width));
        }
        self.stft.validate()?;
        if self.clip_samples < self.stft.window_size || self.sample_rate == 0 {
            return bad("clip shorter than one analysis window".into());
        }
        if self.encoder.uses_ddsp() {
            let dd = &self.ddsp;
            if dd.mfcc_coeffs == 0 || dd.mfcc_coeffs > dd.n_mels || dd.gru_units == 0 || dd.z_dim == 0 {
                return bad("DDSP widths must be positive with mfcc_coeffs <= n_mels".into());
            }
            if dd.mlp_layers == 0 || dd.mlp_hidden == 0 {
                return bad("DDSP MLP needs at least one layer".into());
            }
            if !(dd.f0_min > 0.0 && dd.f0_min < dd.f0_max && dd.f0_max < self.sample_rate as f64 / 2.0) {
                return bad("need 0 < f0_min < f0_max < sample_rate / 2".into());
            }
        }
        self.feature_grid()?;
        Ok(())
    }

    /// Spectrogram grid `(bins, frames)` of one input clip.
    pub fn spectrogram_grid(&self) -> (usize, usize) {
        (self.stft.bins(), frame_count(self.clip_samples, &self.stft))
    }

    /// Spatial size of the encoder output.
    pub fn feature_grid(&self) -> Result<(usize, usize)> {
        let g = encoder_geometry();
        let (mut h, mut w) = self.spectrogram_grid();
        for _ in 0..4 {
            (h, w) = g.conv_output(h, w).ok_or_else(|| {
                Error::Config(format!("spectrogram {:?} too small for four strided convs", self.spectrogram_grid()))
            })?;
        }
        Ok((h, w))
    }

    /// Channels of the encoder output entering the context module.
    pub fn encoder_channels(&self) -> usize {
        let per_branch = self.input_channels.len() * self.conv_channels[3];
        match self.encoder {
            EncoderKind::Combined => 2 * per_branch,
            _ => per_branch,
        }
    }

    /// Reference ears `(left, right)` whose spectrograms the S3R masks
    /// multiply. A single front channel serves both ears.
    pub fn reference_pair(&self) -> (u8, u8) {
        let (l, r) = PAIR_CHANNELS[0];
        match (self.input_channels.contains(&l), self.input_channels.contains(&r)) {
            (false, true) => (r, r),
            (true, false) => (l, l),
            _ => (l, r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_sets_parse() {
        let all: TaskSet = "SDM+R".parse().unwrap();
        assert_eq!(all, TaskSet::ALL);
        assert_eq!(all.to_string(), "SDMR");
        let named: TaskSet = "semantic,motion".parse().unwrap();
        assert_eq!("s3r".parse::<TaskSet>().unwrap(), TaskSet::of(&[Task::S3r]));
        assert!(named.contains(Task::Motion) && !named.contains(Task::Depth));
        assert!(TaskSet::SEMANTIC.is_subset(named));
        assert!("X".parse::<TaskSet>().is_err());
        assert!("".parse::<TaskSet>().is_err());
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = ModelConfig::default();
        cfg.tasks = TaskSet::ALL;
        cfg.s3r_pairs = vec![1, 3];
        cfg.encoder = EncoderKind::Combined;
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert_eq!(parse_pairs("1-6, 2-5").unwrap(), vec![1, 3]);
        assert!(parse_pairs("1-2").is_err());
    }

    #[test]
    fn desk_scale_feature_grid() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.spectrogram_grid(), (257, 97));
        assert_eq!(cfg.feature_grid().unwrap(), (16, 6));
        assert_eq!(cfg.encoder_channels(), 128);
    }

    #[test]
    fn invalid_configs() {
        let bad_channels = ModelConfig { input_channels: vec![9], ..ModelConfig::default() };
        assert!(bad_channels.validate().is_err());
        let no_pairs = ModelConfig { tasks: TaskSet::ALL, s3r_pairs: vec![], ..ModelConfig::default() };
        assert!(no_pairs.validate().is_err());
    }
}
