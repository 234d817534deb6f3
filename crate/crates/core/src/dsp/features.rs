use ndarray::Array2;

use super::{stft, ComplexSpectrogram, StftParams, Waveform};
use crate::error::{Error, Result};

/// Floor applied to power-like quantities before taking a logarithm.
pub const DB_FLOOR: f64 = 1e-7;
/// Default additive floor for log-magnitude spectrograms.
pub const LOG_SPEC_EPS: f64 = 1e-7;

/// `ln(|s| + eps)`, same shape as `s`.
pub fn log_spectrogram(s: &ComplexSpectrogram, floor_eps: f64) -> Result<Array2<f64>> {
    if !(floor_eps > 0.0) {
        return Err(Error::InvalidInput(format!(
            "log floor must be positive, got {floor_eps}"
        )));
    }
    Ok(s.data.mapv(|c| (c.norm() + floor_eps).ln()))
}

fn a_weighting_ratio(f: f64) -> f64 {
    const C1: f64 = 20.598_997 * 20.598_997;
    const C2: f64 = 107.652_65 * 107.652_65;
    const C3: f64 = 737.862_23 * 737.862_23;
    const C4: f64 = 12_194.217 * 12_194.217;
    let f2 = f * f;
    C4 * f2 * f2 / ((f2 + C1) * ((f2 + C2) * (f2 + C3)).sqrt() * (f2 + C4))
}

/// A-weighting gain in dB, normalized to exactly 0 dB at 1 kHz.
pub fn a_weighting_db(f: f64) -> f64 {
    20.0 * (a_weighting_ratio(f) / a_weighting_ratio(1000.0)).log10()
}

/// A-weighting as a linear power multiplier (`10^(dB/10)`), finite at DC.
pub fn a_weighting_power(f: f64) -> f64 {
    let r = a_weighting_ratio(f) / a_weighting_ratio(1000.0);
    r * r
}

/// Corpus statistics used to standardize loudness curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoudnessStats {
    pub mean: f64,
    pub std: f64,
}

impl LoudnessStats {
    pub const IDENTITY: LoudnessStats = LoudnessStats { mean: 0.0, std: 1.0 };

    /// Mean and standard deviation over every frame of every clip.
    pub fn fit<'a>(curves: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for c in curves {
            for &v in c {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(Error::DegenerateStatistics("no loudness frames".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        Ok(LoudnessStats { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

fn power_spectrum(s: &ComplexSpectrogram) -> Array2<f64> {
    let window = s.params.window.coefficients(s.params.window_size);
    let norm: f64 = window.iter().sum::<f64>().powi(2);
    s.data.mapv(|c| c.norm_sqr() / norm)
}

fn bin_frequency(k: usize, p: &StftParams, sample_rate: u32) -> f64 {
    k as f64 * sample_rate as f64 / p.window_size as f64
}

/// Per-frame A-weighted power in dB, before corpus normalization.
pub fn a_weighted_loudness_db(w: &Waveform, p: &StftParams) -> Result<Vec<f64>> {
    let s = stft(w, p)?;
    let power = power_spectrum(&s);
    let weights: Vec<f64> = (0..s.bins())
        .map(|k| a_weighting_power(bin_frequency(k, p, w.sample_rate)))
        .collect();
    Ok((0..s.frames())
        .map(|t| {
            let e: f64 = (0..s.bins()).map(|k| power[[k, t]] * weights[k]).sum();
            10.0 * e.max(DB_FLOOR).log10()
        })
        .collect())
}

/// Per-frame loudness, standardized with corpus statistics.
pub fn a_weighted_loudness(
    w: &Waveform,
    p: &StftParams,
    stats: &LoudnessStats,
) -> Result<Vec<f64>> {
    Ok(a_weighted_loudness_db(w, p)?
        .into_iter()
        .map(|v| stats.apply(v))
        .collect())
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over `[0, sr/2]`, each scaled to unit total weight.
/// Shape `(n_mels, bins)`.
pub fn mel_filterbank(n_mels: usize, p: &StftParams, sample_rate: u32) -> Result<Array2<f64>> {
    let bins = p.bins();
    if n_mels == 0 || n_mels > bins {
        return Err(Error::Config(format!(
            "{n_mels} mel bands cannot be built from {bins} frequency bins"
        )));
    }
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = bin_frequency(k, p, sample_rate);
            let v = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = v;
        }
        let total: f64 = fb.row(m).sum();
        if total > 0.0 {
            fb.row_mut(m).mapv_inplace(|v| v / total);
        }
    }
    Ok(fb)
}

/// Mel-frequency cepstral coefficients, shape `(frames, n_coeffs)`.
pub fn mfcc(w: &Waveform, p: &StftParams, n_mels: usize, n_coeffs: usize) -> Result<Array2<f64>> {
    if n_coeffs == 0 || n_coeffs > n_mels {
        return Err(Error::Config(format!(
            "need 0 < n_coeffs ({n_coeffs}) <= n_mels ({n_mels})"
        )));
    }
    let fb = mel_filterbank(n_mels, p, w.sample_rate)?;
    let s = stft(w, p)?;
    let mel = fb.dot(&power_spectrum(&s)); // (n_mels, frames)
    let log_mel = mel.mapv(|e| e.max(DB_FLOOR).ln());
    let dct = dct_matrix(n_coeffs, n_mels);
    Ok(dct.dot(&log_mel).reversed_axes())
}

/// Orthonormal DCT-II rows `0..n_out` for inputs of length `n_in`.
fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    let m = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(j, i)| {
        let s = if j == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
        s * (std::f64::consts::PI * j as f64 * (i as f64 + 0.5) / m).cos()
    })
}
