use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{StftParams, Waveform};
use crate::error::{Error, Result};

/// Time-frequency representation: `data[[bin, frame]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Array2<Complex64>,
    pub params: StftParams,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn zeros(bins: usize, frames: usize, params: StftParams, sample_rate: u32) -> Self {
        ComplexSpectrogram {
            data: Array2::zeros((bins, frames)),
            params,
            sample_rate,
        }
    }

    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm())
    }

    /// Length of the waveform an inverse transform produces.
    pub fn signal_len(&self) -> usize {
        self.params.window_size + (self.frames().saturating_sub(1)) * self.params.hop_length
    }
}

pub fn periodic_hann(size: usize) -> Vec<f64> {
    (0..size)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos())
        .collect()
}

/// Number of full frames that fit in `len` samples (no padding).
pub fn frame_count(len: usize, p: &StftParams) -> usize {
    if len < p.window_size {
        0
    } else {
        1 + (len - p.window_size) / p.hop_length
    }
}

pub fn stft(w: &Waveform, p: &StftParams) -> Result<ComplexSpectrogram> {
    p.validate()?;
    w.validate()?;
    if w.len() < p.window_size {
        return Err(Error::InvalidInput(format!(
            "waveform of {} samples is shorter than one {}-sample window",
            w.len(),
            p.window_size
        )));
    }
    let n = p.window_size;
    let bins = p.bins();
    let frames = frame_count(w.len(), p);
    let window = p.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut data = Array2::zeros((bins, frames));
    for t in 0..frames {
        let start = t * p.hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(w.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            data[[k, t]] = buf[k];
        }
    }
    Ok(ComplexSpectrogram {
        data,
        params: *p,
        sample_rate: w.sample_rate,
    })
}

/// Steady-state sum of squared windows for each phase within one hop.
fn overlap_profile(window: &[f64], hop: usize) -> Vec<f64> {
    (0..hop)
        .map(|phase| {
            window
                .iter()
                .skip(phase)
                .step_by(hop)
                .map(|w| w * w)
                .sum::<f64>()
        })
        .collect()
}

pub(crate) fn check_invertible(p: &StftParams) -> Result<()> {
    let window = p.window.coefficients(p.window_size);
    let profile = overlap_profile(&window, p.hop_length);
    let max = profile.iter().cloned().fold(0.0, f64::max);
    if profile.iter().any(|&s| s <= 1e-12 * max.max(1e-300)) {
        return Err(Error::NonInvertible(format!(
            "overlap-add of a {}-sample window at hop {} has zeros",
            p.window_size, p.hop_length
        )));
    }
    Ok(())
}

/// Overlap-add inverse with squared-window compensation.
///
/// Samples near the two ends, where only a sliver of one window overlaps, are
/// left at zero when the accumulated window weight vanishes.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    let p = s.params;
    p.validate()?;
    if s.frames() == 0 {
        return Err(Error::InvalidInput("spectrogram has no frames".into()));
    }
    if s.bins() != p.bins() {
        return Err(Error::InvalidInput(format!(
            "spectrogram has {} bins, window {} needs {}",
            s.bins(),
            p.window_size,
            p.bins()
        )));
    }
    check_invertible(&p)?;
    let n = p.window_size;
    let window = p.window.coefficients(n);
    let len = s.signal_len();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut out = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / n as f64;
    for t in 0..s.frames() {
        hermitian_fill(&mut buf, s.data.column(t).iter().copied());
        ifft.process(&mut buf);
        let start = t * p.hop_length;
        for i in 0..n {
            out[start + i] += buf[i].re * scale * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    let peak = wsum.iter().cloned().fold(0.0, f64::max);
    for (o, ws) in out.iter_mut().zip(&wsum) {
        if *ws > 1e-8 * peak {
            *o /= ws;
        } else {
            *o = 0.0;
        }
    }
    Ok(Waveform {
        samples: out,
        sample_rate: s.sample_rate,
        channel_id: None,
    })
}

/// Expand a one-sided spectrum into a full Hermitian buffer. The imaginary
/// parts of the DC and Nyquist bins are dropped.
pub(crate) fn hermitian_fill(buf: &mut [Complex64], half: impl Iterator<Item = Complex64>) {
    let n = buf.len();
    for (k, c) in half.enumerate().take(n / 2 + 1) {
        buf[k] = c;
    }
    buf[0].im = 0.0;
    buf[n / 2].im = 0.0;
    for k in 1..n / 2 {
        buf[n - k] = buf[k].conj();
    }
}
