use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{frame_count, StftParams, Waveform};
use crate::error::{Error, Result};

const VOICING_THRESHOLD: f64 = 0.5;
/// A later peak must beat the first candidate by this factor to win, which
/// keeps the estimator on the fundamental rather than a subharmonic lag.
const FIRST_PEAK_RATIO: f64 = 0.9;

/// Per-frame fundamental frequency from the normalized autocorrelation, with
/// parabolic refinement of the winning lag. Unvoiced or silent frames are 0.
///
/// Frames follow the STFT framing of `p`, so the output has one value per
/// spectrogram column. The longest usable lag is three quarters of a window,
/// which bounds how low `fmin` is honored.
pub fn estimate_f0(w: &Waveform, p: &StftParams, fmin: f64, fmax: f64) -> Result<Vec<f64>> {
    p.validate()?;
    w.validate()?;
    let sr = w.sample_rate as f64;
    if !(fmin > 0.0 && fmin < fmax && fmax < sr / 2.0) {
        return Err(Error::Config(format!(
            "need 0 < fmin ({fmin}) < fmax ({fmax}) < sr/2 ({})",
            sr / 2.0
        )));
    }
    let n = p.window_size;
    let lag_min = ((sr / fmax).floor() as usize).max(2);
    let lag_max = ((sr / fmin).ceil() as usize).min(3 * n / 4);
    if lag_min + 2 > lag_max {
        return Err(Error::Config(format!(
            "pitch range {fmin}..{fmax} Hz leaves no usable lags for a {n}-sample window"
        )));
    }

    let fft_len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(fft_len);
    let inv = planner.plan_fft_inverse(fft_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
    let mut prefix = vec![0.0; n + 1];
    let mut nccf = vec![0.0; lag_max + 2];

    let frames = frame_count(w.len(), p);
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let frame = &w.samples[t * p.hop_length..t * p.hop_length + n];
        let mean = frame.iter().sum::<f64>() / n as f64;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(if i < n { frame[i] - mean } else { 0.0 }, 0.0);
        }
        for i in 0..n {
            prefix[i + 1] = prefix[i] + buf[i].re * buf[i].re;
        }
        if prefix[n] < 1e-12 {
            out.push(0.0);
            continue;
        }
        fwd.process(&mut buf);
        for b in buf.iter_mut() {
            *b = Complex64::new(b.norm_sqr(), 0.0);
        }
        inv.process(&mut buf);
        let scale = 1.0 / fft_len as f64;
        for lag in lag_min - 1..=lag_max + 1 {
            let head = prefix[n - lag];
            let tail = prefix[n] - prefix[lag];
            let denom = (head * tail).sqrt();
            nccf[lag] = if denom > 1e-15 {
                buf[lag].re * scale / denom
            } else {
                0.0
            };
        }

        let peaks: Vec<usize> = (lag_min..=lag_max)
            .filter(|&l| nccf[l] >= nccf[l - 1] && nccf[l] > nccf[l + 1])
            .collect();
        let best = peaks.iter().map(|&l| nccf[l]).fold(f64::MIN, f64::max);
        if peaks.is_empty() || best < VOICING_THRESHOLD {
            out.push(0.0);
            continue;
        }
        let lag = peaks
            .into_iter()
            .find(|&l| nccf[l] >= FIRST_PEAK_RATIO * best)
            .expect("best peak qualifies");
        let (a, b, c) = (nccf[lag - 1], nccf[lag], nccf[lag + 1]);
        let curvature = a - 2.0 * b + c;
        let shift = if curvature.abs() > 1e-15 {
            (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        out.push((sr / (lag as f64 + shift)).clamp(fmin, fmax));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn synth(f: impl Fn(f64) -> f64, sr: u32, len: usize) -> Waveform {
        Waveform::new((0..len).map(|i| f(i as f64 / sr as f64)).collect(), sr).unwrap()
    }

    #[test]
    fn sine_440() {
        let w = synth(|t| 0.3 * (2.0 * PI * 440.0 * t).sin(), 16_000, 16_000);
        let f0 = estimate_f0(&w, &StftParams::default(), 40.0, 1000.0).unwrap();
        assert_eq!(f0.len(), 97);
        for v in f0 {
            assert!((v - 440.0).abs() <= 2.0, "{v}");
        }
    }

    #[test]
    fn square_220_reports_fundamental() {
        let w = synth(
            |t| if (2.0 * PI * 220.0 * t).sin() >= 0.0 { 0.2 } else { -0.2 },
            16_000,
            16_000,
        );
        let f0 = estimate_f0(&w, &StftParams::default(), 40.0, 1000.0).unwrap();
        for v in f0 {
            assert!((v - 220.0).abs() <= 2.0, "{v}");
        }
    }

    #[test]
    fn silence_is_unvoiced() {
        let w = Waveform::zeros(4000, 16_000);
        let f0 = estimate_f0(&w, &StftParams::default(), 40.0, 1000.0).unwrap();
        assert!(f0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tones_up_to_500_hz_within_two_hz() {
        for f in [60.0, 100.0, 157.0, 250.0, 333.0, 499.0] {
            let w = synth(|t| 0.1 * (2.0 * PI * f * t + 0.3).sin(), 16_000, 8000);
            let f0 = estimate_f0(&w, &StftParams::default(), 40.0, 1000.0).unwrap();
            for v in f0 {
                assert!((v - f).abs() <= 2.0, "{f}: {v}");
            }
        }
    }

    #[test]
    fn bad_range_is_config_error() {
        let w = Waveform::zeros(4000, 16_000);
        assert!(estimate_f0(&w, &StftParams::default(), 500.0, 100.0).is_err());
        assert!(estimate_f0(&w, &StftParams::default(), 40.0, 9000.0).is_err());
    }
}
