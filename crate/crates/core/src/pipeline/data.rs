//! Loading samples from a rendered dataset and turning them into model
//! inputs and training targets.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::dsp::{
    a_weighted_loudness_db, estimate_f0, mfcc, read_bsna, rms_normalize, stft, ComplexSpectrogram, LoudnessStats,
    Waveform, LOG_SPEC_EPS,
};
use crate::error::{Error, Result};
use crate::formats::{read_bsnt, KvMap};
use crate::losses::S3rLossMode;
use crate::model::{ModelConfig, ModelInput, Task};
use crate::rig::{read_manifest, ManifestEntry, Split, PAIR_CHANNELS};

use super::RunConfig;

/// Meters are clipped to this range, then mapped onto `[0, 1]`.
pub const DEPTH_RANGE: (f64, f64) = (1.0, 50.0);

pub fn depth_to_unit(d: f64) -> f64 {
    (d.clamp(DEPTH_RANGE.0, DEPTH_RANGE.1) - DEPTH_RANGE.0) / (DEPTH_RANGE.1 - DEPTH_RANGE.0)
}

pub fn unit_to_depth(u: f64) -> f64 {
    DEPTH_RANGE.0 + u.clamp(0.0, 1.0) * (DEPTH_RANGE.1 - DEPTH_RANGE.0)
}

/// Dataset statistics fitted on the training split and reused at
/// evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    /// Mean per-clip RMS over every input channel of the training split.
    pub mean_rms: f64,
    pub loudness: LoudnessStats,
}

impl NormStats {
    pub fn to_kv(&self, kv: &mut KvMap) {
        kv.set("mean_rms", format!("{:e}", self.mean_rms));
        kv.set("loudness_mean", format!("{:e}", self.loudness.mean));
        kv.set("loudness_std", format!("{:e}", self.loudness.std));
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        Ok(NormStats {
            mean_rms: kv.require("mean_rms")?,
            loudness: LoudnessStats {
                mean: kv.require("loudness_mean")?,
                std: kv.require("loudness_std")?,
            },
        })
    }
}

/// Ground truth of one sample on the model grid.
#[derive(Debug, Clone)]
pub struct Targets {
    pub labels: Array2<u8>,
    /// Meters.
    pub depth: Array2<f64>,
    /// `(2, H, W)` pixels.
    pub flow: Array3<f64>,
}

/// One preprocessed clip.
#[derive(Debug, Clone)]
pub struct Clip {
    pub id: String,
    /// `(C, bins, frames)` log magnitudes.
    pub spec: Option<Vec<f32>>,
    /// `(C, frames, 2 + mfcc)`.
    pub ddsp: Option<Vec<f32>>,
    /// Normalized reference ears, left then right.
    pub reference: Option<[Waveform; 2]>,
    /// Normalized target ears per output pair.
    pub s3r_targets: Vec<[Waveform; 2]>,
    pub targets: Targets,
}

/// Channel waveforms of a sample after amplitude scaling and RMS
/// normalization, indexed by channel id - 1.
pub fn load_audio(dir: &Path, amp: f64, mean_rms: f64, target_rms: f64) -> Result<Vec<Waveform>> {
    let audio = read_bsna(&dir.join("audio.bsna"))?;
    (0..audio.channels.len())
        .map(|i| rms_normalize(&audio.waveform(i).scaled(amp), mean_rms, target_rms))
        .collect()
}

fn channel<'a>(waves: &'a [Waveform], id: u8) -> Result<&'a Waveform> {
    waves
        .get(id as usize - 1)
        .ok_or_else(|| Error::InvalidInput(format!("sample has no channel {id}")))
}

fn fit_length(w: &Waveform, len: usize) -> Waveform {
    let mut samples = w.samples.clone();
    samples.resize(len, 0.0);
    Waveform { samples, ..w.clone() }
}

/// Nearest-neighbour resampling of a grid.
fn resample<V: Copy>(a: &Array2<V>, h: usize, w: usize) -> Array2<V> {
    let (sh, sw) = a.dim();
    Array2::from_shape_fn((h, w), |(r, c)| a[[r * sh / h, c * sw / w]])
}

/// Reads labels, depth and flow and brings them onto a `(h, w)` grid, with
/// flow rescaled to the new pixel size.
pub fn load_targets(dir: &Path, h: usize, w: usize) -> Result<Targets> {
    let lt = read_bsnt(&dir.join("labels.bsnt"))?;
    let dt = read_bsnt(&dir.join("depth.bsnt"))?;
    let ft = read_bsnt(&dir.join("flow.bsnt"))?;
    let bad = |what: &str| Error::format(dir, format!("{what} tensor has an unexpected shape"));
    if lt.dims.len() != 2 || dt.dims != lt.dims {
        return Err(bad("depth"));
    }
    let (sh, sw) = (lt.dims[0], lt.dims[1]);
    if ft.dims != [sh, sw, 2] {
        return Err(bad("flow"));
    }
    let labels = Array2::from_shape_vec((sh, sw), lt.data.iter().map(|&v| v as u8).collect()).map_err(|_| bad("labels"))?;
    let depth = Array2::from_shape_vec((sh, sw), dt.to_f64()).map_err(|_| bad("depth"))?;
    let flow = Array3::from_shape_vec((sh, sw, 2), ft.to_f64()).map_err(|_| bad("flow"))?;
    let (sx, sy) = (w as f64 / sw as f64, h as f64 / sh as f64);
    let fx = resample(&flow.index_axis(ndarray::Axis(2), 0).to_owned(), h, w).mapv(|v| v * sx);
    let fy = resample(&flow.index_axis(ndarray::Axis(2), 1).to_owned(), h, w).mapv(|v| v * sy);
    let flow = ndarray::stack(ndarray::Axis(0), &[fx.view(), fy.view()]).expect("equal grids");
    Ok(Targets {
        labels: resample(&labels, h, w),
        depth: resample(&depth, h, w),
        flow,
    })
}

/// Mean RMS of the input channels and A-weighted loudness statistics over
/// the given samples.
pub fn fit_stats(dirs: &[PathBuf], model: &ModelConfig, target_rms: f64) -> Result<NormStats> {
    if dirs.is_empty() {
        return Err(Error::DegenerateStatistics("no training samples to fit statistics on".into()));
    }
    let rms: Vec<Vec<f64>> = dirs
        .par_iter()
        .map(|d| {
            let audio = read_bsna(&d.join("audio.bsna"))?;
            model
                .input_channels
                .iter()
                .map(|&c| {
                    let i = c as usize - 1;
                    if i >= audio.channels.len() {
                        return Err(Error::InvalidInput(format!("sample has no channel {c}")));
                    }
                    Ok(audio.waveform(i).rms())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rms.into_iter().flatten().collect();
    let mean_rms = flat.iter().sum::<f64>() / flat.len() as f64;
    if !(mean_rms > 0.0) {
        return Err(Error::DegenerateStatistics("training audio is silent".into()));
    }
    let loudness = if model.encoder.uses_ddsp() {
        let curves: Vec<Vec<f64>> = dirs
            .par_iter()
            .map(|d| {
                let waves = load_audio(d, 1.0, mean_rms, target_rms)?;
                let mut out = Vec::new();
                for &c in &model.input_channels {
                    out.extend(a_weighted_loudness_db(channel(&waves, c)?, &model.stft)?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        LoudnessStats::fit(curves.iter().map(Vec::as_slice))?
    } else {
        LoudnessStats::IDENTITY
    };
    Ok(NormStats { mean_rms, loudness })
}

/// Builds encoder features and targets for one sample directory.
pub fn prepare_clip(dir: &Path, id: &str, cfg: &RunConfig, stats: &NormStats, amp: f64) -> Result<Clip> {
    let m = &cfg.model;
    let waves: Vec<Waveform> = load_audio(dir, amp, stats.mean_rms, cfg.target_rms)?
        .iter()
        .map(|w| fit_length(w, m.clip_samples))
        .collect();
    let (bins, frames) = m.spectrogram_grid();
    let spec = if m.encoder.uses_spectrogram() {
        let mut out = Vec::with_capacity(m.input_channels.len() * bins * frames);
        for &c in &m.input_channels {
            let s = stft(channel(&waves, c)?, &m.stft)?;
            out.extend(s.data.iter().map(|v| (v.norm() + LOG_SPEC_EPS).ln() as f32));
        }
        Some(out)
    } else {
        None
    };
    let ddsp = if m.encoder.uses_ddsp() {
        let dd = &m.ddsp;
        let f = dd.frame_features();
        let mut out = Vec::with_capacity(m.input_channels.len() * frames * f);
        for &c in &m.input_channels {
            let w = channel(&waves, c)?;
            let f0 = estimate_f0(w, &m.stft, dd.f0_min, dd.f0_max)?;
            let loud = a_weighted_loudness_db(w, &m.stft)?;
            let mf = mfcc(w, &m.stft, dd.n_mels, dd.mfcc_coeffs)?;
            for t in 0..frames {
                out.push((f0[t] / dd.f0_max) as f32);
                out.push(stats.loudness.apply(loud[t]) as f32);
                out.extend(mf.row(t).iter().map(|&v| v as f32));
            }
        }
        Some(out)
    } else {
        None
    };
    let (reference, s3r_targets) = if m.tasks.contains(Task::S3r) {
        let (l, r) = m.reference_pair();
        let reference = [channel(&waves, l)?.clone(), channel(&waves, r)?.clone()];
        let targets = m
            .s3r_pairs
            .iter()
            .map(|&p| {
                let (l, r) = PAIR_CHANNELS[p];
                Ok([channel(&waves, l)?.clone(), channel(&waves, r)?.clone()])
            })
            .collect::<Result<_>>()?;
        (Some(reference), targets)
    } else {
        (None, Vec::new())
    };
    Ok(Clip {
        id: id.to_string(),
        spec,
        ddsp,
        reference,
        s3r_targets,
        targets: load_targets(dir, m.grid_height, m.grid_width)?,
    })
}

/// Manifest entries of `split`, in manifest order. An empty split is an
/// error.
pub fn split_entries(dataset: &Path, split: Split) -> Result<Vec<ManifestEntry>> {
    let entries: Vec<ManifestEntry> = read_manifest(&dataset.join("manifest.txt"))?
        .into_iter()
        .filter(|e| e.split == split)
        .collect();
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "split {split} is missing from {}",
            dataset.display()
        )));
    }
    Ok(entries)
}

pub fn prepare_split(
    cfg: &RunConfig,
    entries: &[ManifestEntry],
    stats: &NormStats,
    amp: f64,
) -> Result<Vec<Clip>> {
    entries
        .par_iter()
        .map(|e| prepare_clip(&cfg.dataset.join(&e.id), &e.id, cfg, stats, amp))
        .collect()
}

/// Model inputs and targets for a group of clips.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub input: ModelInput<f32>,
    pub labels: Vec<u8>,
    /// `(N, 1, H, W)` depth mapped to `[0, 1]`.
    pub depth: crate::nn::Tensor<f32>,
    /// `(N, 2, H, W)`.
    pub flow: crate::nn::Tensor<f32>,
    /// Complex-L2 mode: `(N, P, 2, 2, bins, frames)` target difference
    /// spectrograms. Multiscale mode: `(N·P·2, L)` target waveforms.
    pub s3r_target: Option<crate::nn::Tensor<f32>>,
    /// Multiscale mode: `(N·P·2, L)` reference ears repeated per pair.
    pub s3r_reference_wave: Option<crate::nn::Tensor<f32>>,
}

fn spec_planes(s: &ComplexSpectrogram, out: &mut Vec<f32>) {
    out.extend(s.data.iter().map(|v| v.re as f32));
    out.extend(s.data.iter().map(|v| v.im as f32));
}

/// Reference spectrograms for a clip, left then right.
pub fn reference_specs(clip: &Clip, m: &ModelConfig) -> Result<Option<[ComplexSpectrogram; 2]>> {
    match &clip.reference {
        Some([l, r]) => Ok(Some([stft(l, &m.stft)?, stft(r, &m.stft)?])),
        None => Ok(None),
    }
}

pub fn make_batch(clips: &[&Clip], m: &ModelConfig, mode: S3rLossMode) -> Result<Batch> {
    use crate::nn::Tensor;
    let n = clips.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let c = m.input_channels.len();
    let (bins, frames) = m.spectrogram_grid();
    let (h, w) = (m.grid_height, m.grid_width);
    let join = |get: &dyn Fn(&Clip) -> Option<&Vec<f32>>| -> Option<Vec<f32>> {
        let parts: Option<Vec<&Vec<f32>>> = clips.iter().map(|c| get(c)).collect();
        parts.map(|p| p.into_iter().flatten().copied().collect())
    };
    let spec = join(&|c| c.spec.as_ref())
        .map(|d| Tensor::new(&[n, c, bins, frames], d))
        .transpose()?;
    let ddsp = join(&|c| c.ddsp.as_ref())
        .map(|d| Tensor::new(&[n, c, frames, m.ddsp.frame_features()], d))
        .transpose()?;
    let mut labels = Vec::with_capacity(n * h * w);
    let mut depth = Vec::with_capacity(n * h * w);
    let mut flow = Vec::with_capacity(2 * n * h * w);
    for clip in clips {
        let t = &clip.targets;
        labels.extend(t.labels.iter().copied());
        depth.extend(t.depth.iter().map(|&d| depth_to_unit(d) as f32));
        flow.extend(t.flow.iter().map(|&v| v as f32));
    }
    let (mut reference, mut s3r_target, mut s3r_reference_wave) = (None, None, None);
    if m.tasks.contains(Task::S3r) {
        let p = m.s3r_pairs.len();
        let mut refs = Vec::with_capacity(n * 4 * bins * frames);
        let mut tgt = Vec::new();
        let mut ref_wave = Vec::new();
        let len = frame_len(m);
        for clip in clips {
            let rs = reference_specs(clip, m)?
                .ok_or_else(|| Error::Config(format!("clip {} was prepared without S3R inputs", clip.id)))?;
            for s in &rs {
                spec_planes(s, &mut refs);
            }
            for pair in &clip.s3r_targets {
                for ear in 0..2 {
                    match mode {
                        S3rLossMode::ComplexL2 => {
                            let y = stft(&pair[ear], &m.stft)?;
                            let mut d = rs[ear].clone();
                            d.data.zip_mut_with(&y.data, |a, b| *a -= b);
                            spec_planes(&d, &mut tgt);
                        }
                        S3rLossMode::Multiscale => {
                            tgt.extend(pair[ear].samples[..len].iter().map(|&v| v as f32));
                            let r = &clip.reference.as_ref().expect("reference ears")[ear];
                            ref_wave.extend(r.samples[..len].iter().map(|&v| v as f32));
                        }
                    }
                }
            }
        }
        reference = Some(Tensor::new(&[n, 2, 2, bins, frames], refs)?);
        match mode {
            S3rLossMode::ComplexL2 => s3r_target = Some(Tensor::new(&[n, p, 2, 2, bins, frames], tgt)?),
            S3rLossMode::Multiscale => {
                s3r_target = Some(Tensor::new(&[n * p * 2, len], tgt)?);
                s3r_reference_wave = Some(Tensor::new(&[n * p * 2, len], ref_wave)?);
            }
        }
    }
    Ok(Batch {
        ids: clips.iter().map(|c| c.id.clone()).collect(),
        input: ModelInput { spec, ddsp, reference },
        labels,
        depth: Tensor::new(&[n, 1, h, w], depth)?,
        flow: Tensor::new(&[n, 2, h, w], flow)?,
        s3r_target,
        s3r_reference_wave,
    })
}

/// Samples covered by whole analysis windows of a clip.
pub fn frame_len(m: &ModelConfig) -> usize {
    let (_, frames) = m.spectrogram_grid();
    (frames - 1) * m.stft.hop_length + m.stft.window_size
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_mapping() {
        assert_eq!(depth_to_unit(1.0), 0.0);
        assert_eq!(depth_to_unit(50.0), 1.0);
        assert_eq!(depth_to_unit(0.2), 0.0);
        assert_eq!(depth_to_unit(80.0), 1.0);
        for d in [1.0, 3.7, 25.0, 50.0] {
            assert!((unit_to_depth(depth_to_unit(d)) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_resample_keeps_identity_and_halves() {
        let a = Array2::from_shape_fn((4, 6), |(r, c)| (r * 6 + c) as u8);
        assert_eq!(resample(&a, 4, 6), a);
        let half = resample(&a, 2, 3);
        assert_eq!(half[[1, 2]], a[[2, 4]]);
    }
}
