//! Label preparation: per-pixel mode background, sound-making masks and
//! sample selection.

use ndarray::{Array2, Zip};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Default RMS threshold for [`select_sample`].
pub const ENERGY_THRESHOLD: f64 = 0.01;
/// Default fraction of pixels that must differ from the background.
pub const MIN_DIFF_FRACTION: f64 = 0.05;

/// Per-pixel most frequent value over `frames`, ties going to the smallest
/// value.
///
/// Works on label maps as well as quantized single-channel intensities.
pub fn mode_background<V: Copy + Ord + Default>(frames: &[Array2<V>]) -> Result<Array2<V>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("mode of an empty sequence".into()))?;
    let dim = first.dim();
    if frames.iter().any(|f| f.dim() != dim) {
        return Err(Error::InvalidInput("frames differ in shape".into()));
    }
    let mut history = Vec::with_capacity(frames.len());
    Ok(Array2::from_shape_fn(dim, |idx| {
        history.clear();
        history.extend(frames.iter().map(|f| f[idx]));
        history.sort_unstable();
        let (mut best, mut best_run) = (history[0], 0);
        let mut i = 0;
        while i < history.len() {
            let mut j = i;
            while j < history.len() && history[j] == history[i] {
                j += 1;
            }
            // strict comparison keeps the smallest value on ties
            if j - i > best_run {
                best = history[i];
                best_run = j - i;
            }
            i = j;
        }
        best
    }))
}

/// 1 where `y_t` holds a target class that differs from the background.
pub fn soundmaking_mask(y_t: &Array2<u8>, y_bg: &Array2<u8>, targets: &[u8]) -> Result<Array2<u8>> {
    if y_t.dim() != y_bg.dim() {
        return Err(Error::InvalidInput(format!(
            "label grid {:?} vs background {:?}",
            y_t.dim(),
            y_bg.dim()
        )));
    }
    let mut out = Array2::zeros(y_t.dim());
    Zip::from(&mut out)
        .and(y_t)
        .and(y_bg)
        .for_each(|o, &t, &b| *o = u8::from(targets.contains(&t) && t != b));
    Ok(out)
}

/// Keeps only target-class labels flagged by the sound-making mask.
pub fn masked_labels(y_t: &Array2<u8>, mask: &Array2<u8>) -> Array2<u8> {
    let mut out = y_t.clone();
    Zip::from(&mut out).and(mask).for_each(|o, &m| {
        if m == 0 {
            *o = 0
        }
    });
    out
}

/// Fraction of pixels where the two grids differ.
pub fn diff_fraction(y_t: &Array2<u8>, y_bg: &Array2<u8>) -> f64 {
    let n = y_t.len().max(1);
    let d = Zip::from(y_t).and(y_bg).fold(0usize, |acc, a, b| acc + usize::from(a != b));
    d as f64 / n as f64
}

/// Accepts a clip when its RMS over all channels reaches `energy_threshold`
/// and at least `min_diff_fraction` of the pixels differ from the background.
pub fn select_sample(
    audio: &[Waveform],
    y_t: &Array2<u8>,
    y_bg: &Array2<u8>,
    energy_threshold: f64,
    min_diff_fraction: f64,
) -> bool {
    let total: usize = audio.iter().map(Waveform::len).sum();
    if total == 0 || y_t.dim() != y_bg.dim() {
        return false;
    }
    let energy: f64 = audio.iter().flat_map(|w| &w.samples).map(|s| s * s).sum();
    let rms = (energy / total as f64).sqrt();
    rms >= energy_threshold && diff_fraction(y_t, y_bg) >= min_diff_fraction
}
