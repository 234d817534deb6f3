//! Signal-processing kernels shared by the simulator, the model inputs and the
//! evaluation metrics.
//!
//! Everything here works in `f64` and is a pure function of its inputs.

mod bsna;
mod envelope;
mod features;
mod pitch;
mod stft;

pub use bsna::{read_bsna, write_bsna, AudioFile};
pub use envelope::envelope;
pub use features::{
    a_weighting_db, a_weighting_power, a_weighted_loudness, a_weighted_loudness_db,
    log_spectrogram, mel_filterbank, mfcc, LoudnessStats, DB_FLOOR, LOG_SPEC_EPS,
};
pub use pitch::estimate_f0;
pub(crate) use stft::check_invertible;
pub use stft::{frame_count, istft, periodic_hann, stft, ComplexSpectrogram};

use crate::error::{Error, Result};

/// Target RMS level applied to every channel before the STFT.
pub const DEFAULT_TARGET_RMS: f64 = 0.1;

/// A single channel of fixed-rate audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    /// Rig microphone id (1..=8) when the waveform came from the rig.
    pub channel_id: Option<u8>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let w = Waveform {
            samples,
            sample_rate,
            channel_id: None,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn with_channel(mut self, id: u8) -> Self {
        self.channel_id = Some(id);
        self
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Waveform {
            samples: vec![0.0; len],
            sample_rate,
            channel_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidInput("waveform is empty".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    /// Elementwise scale, keeping rate and channel id.
    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
            channel_id: self.channel_id,
        }
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Analysis window family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    PeriodicHann,
    /// All-ones window. Only invertible when frames overlap.
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, size: usize) -> Vec<f64> {
        match self {
            WindowKind::PeriodicHann => periodic_hann(size),
            WindowKind::Rectangular => vec![1.0; size],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub window_size: usize,
    pub hop_length: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    /// 512-sample periodic Hann window with a 160-sample hop.
    fn default() -> Self {
        StftParams {
            window_size: 512,
            hop_length: 160,
            window: WindowKind::PeriodicHann,
        }
    }
}

impl StftParams {
    pub fn new(window_size: usize, hop_length: usize) -> Result<Self> {
        let p = StftParams {
            window_size,
            hop_length,
            window: WindowKind::PeriodicHann,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size % 2 != 0 {
            return Err(Error::Config(format!(
                "window size must be even and positive, got {}",
                self.window_size
            )));
        }
        if self.hop_length == 0 || self.hop_length > self.window_size {
            return Err(Error::Config(format!(
                "hop length {} must be in 1..={}",
                self.hop_length, self.window_size
            )));
        }
        Ok(())
    }
}

/// Scale a waveform so that a channel whose dataset-wide mean RMS is
/// `dataset_mean_rms` ends up at `target_rms`.
pub fn rms_normalize(w: &Waveform, dataset_mean_rms: f64, target_rms: f64) -> Result<Waveform> {
    w.validate()?;
    if !(dataset_mean_rms.is_finite() && dataset_mean_rms > 0.0) {
        return Err(Error::DegenerateStatistics(format!(
            "dataset mean RMS must be positive, got {dataset_mean_rms}"
        )));
    }
    if !(target_rms.is_finite() && target_rms > 0.0) {
        return Err(Error::InvalidInput(format!(
            "target RMS must be positive, got {target_rms}"
        )));
    }
    Ok(w.scaled(target_rms / dataset_mean_rms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_scale_is_identity() {
        let w = Waveform::new(vec![0.3, -0.2, 0.05], 16_000).unwrap();
        let out = rms_normalize(&w, 0.1, DEFAULT_TARGET_RMS).unwrap();
        assert_eq!(out, w);
    }

    #[test]
    fn constant_waveform_is_rescaled() {
        let w = Waveform::new(vec![0.2; 64], 16_000).unwrap();
        let out = rms_normalize(&w, 0.2, 0.1).unwrap();
        // per-sample loop oracle
        for (o, i) in out.samples.iter().zip(&w.samples) {
            let expected = i * (0.1 / 0.2);
            assert!((o - expected).abs() < 1e-15);
            assert!((o - 0.1).abs() < 1e-15);
        }
        assert_eq!(out.len(), w.len());
        assert_eq!(out.sample_rate, w.sample_rate);
    }

    #[test]
    fn degenerate_statistics_rejected() {
        let w = Waveform::new(vec![0.1; 8], 16_000).unwrap();
        assert!(matches!(
            rms_normalize(&w, 0.0, 0.1),
            Err(Error::DegenerateStatistics(_))
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        let w = Waveform {
            samples: vec![0.0, f64::NAN],
            sample_rate: 16_000,
            channel_id: None,
        };
        assert!(matches!(
            rms_normalize(&w, 0.1, 0.1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn params_validation() {
        assert!(StftParams::new(512, 160).is_ok());
        assert!(StftParams::new(511, 160).is_err());
        assert!(StftParams::new(512, 0).is_err());
        assert!(StftParams::new(512, 513).is_err());
        assert_eq!(StftParams::default().bins(), 257);
    }
}
