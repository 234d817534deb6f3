//! Training objectives.

use crate::dsp::StftParams;
use crate::error::{Error, Result};
use crate::model::{EncoderKind, NUM_CLASSES};
use crate::nn::ops::spectral::{magnitude, stft};
use crate::nn::{cross_entropy, l1, mse, Real, Var};

/// Floor inside the log-magnitude term of the multi-scale loss.
pub const LOG_FLOOR: f64 = 1e-7;
const MAG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Depth.
    pub lambda1: f64,
    /// Motion.
    pub lambda2: f64,
    /// S3R.
    pub lambda3: f64,
    /// Weight of the log-magnitude term.
    pub alpha_spec: f64,
    pub fft_sizes: Vec<usize>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.2,
            lambda2: 0.2,
            lambda3: 0.2,
            alpha_spec: 1.0,
            fft_sizes: vec![256, 128, 64],
        }
    }
}

impl LossWeights {
    /// Defaults for `kind`: the S3R weight drops to 0.02 when the DDSP
    /// branch is present.
    pub fn for_encoder(kind: EncoderKind) -> Self {
        let lambda3 = if kind.uses_ddsp() { 0.02 } else { 0.2 };
        LossWeights { lambda3, ..LossWeights::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.alpha_spec];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        if self.fft_sizes.is_empty() || self.fft_sizes.iter().any(|&n| n < 4) {
            return Err(Error::Config(format!("bad FFT sizes {:?}", self.fft_sizes)));
        }
        Ok(())
    }
}

/// How the S3R term compares prediction and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S3rLossMode {
    /// Mean squared difference of the real and imaginary parts of the
    /// difference spectrograms.
    ComplexL2,
    /// Multi-scale magnitude loss on reconstructed waveforms.
    Multiscale,
}

impl S3rLossMode {
    pub fn for_encoder(kind: EncoderKind) -> Self {
        if kind.uses_ddsp() {
            S3rLossMode::Multiscale
        } else {
            S3rLossMode::ComplexL2
        }
    }
}

/// Mean over pixels of `-ln p(target)` for probabilities `(N, 4, H, W)`.
pub fn cross_entropy_loss<'t, T: Real>(probs: Var<'t, T>, labels: &[u8]) -> Result<Var<'t, T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::InvalidInput(format!("label {bad} outside the {NUM_CLASSES} classes")));
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    cross_entropy(probs, &labels)
}

/// Mean squared difference.
pub fn l2_loss<'t, T: Real>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(Error::InvalidInput(format!(
            "l2 shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    mse(pred, target)
}

/// `Σ_n mean|S_n(pred)| − |S_n(target)|| + α · mean|ln(|S_n(pred)| + ε) − ln(|S_n(target)| + ε)|`
/// over FFT sizes `n` with hop `n / 4`, for waveforms `(B, L)`.
pub fn multiscale_spectral_loss<'t, T: Real>(
    pred: Var<'t, T>,
    target: Var<'t, T>,
    w: &LossWeights,
) -> Result<Var<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(Error::InvalidInput(format!(
            "waveform shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let mut total: Option<Var<'t, T>> = None;
    for &n in &w.fft_sizes {
        let p = StftParams::new(n, (n / 4).max(1))?;
        let mp = magnitude(stft(pred, &p)?, T::of(MAG_EPS))?;
        let mt = magnitude(stft(target, &p)?, T::of(MAG_EPS))?;
        let lin = l1(mp, mt)?;
        let log = l1(mp.ln_eps(T::of(LOG_FLOOR)), mt.ln_eps(T::of(LOG_FLOOR)))?;
        let term = lin.add(log.scale(T::of(w.alpha_spec)))?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Config("no FFT sizes".into()))
}

/// Per-task loss terms; disabled tasks are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<V> {
    pub semantic: Option<V>,
    pub depth: Option<V>,
    pub motion: Option<V>,
    pub s3r: Option<V>,
}

impl<V> Default for LossParts<V> {
    fn default() -> Self {
        LossParts {
            semantic: None,
            depth: None,
            motion: None,
            s3r: None,
        }
    }
}

impl<V: Copy> LossParts<V> {
    fn weighted(&self, w: &LossWeights) -> [Option<(V, f64)>; 3] {
        [
            self.depth.map(|v| (v, w.lambda1)),
            self.motion.map(|v| (v, w.lambda2)),
            self.s3r.map(|v| (v, w.lambda3)),
        ]
    }
}

/// `L_semantic + λ1 L_depth + λ2 L_motion + λ3 L_s3r`; absent terms add 0.
pub fn total_loss<'t, T: Real>(parts: &LossParts<Var<'t, T>>, w: &LossWeights) -> Result<Var<'t, T>> {
    let mut aux: Option<Var<'t, T>> = None;
    for (v, lambda) in parts.weighted(w).into_iter().flatten() {
        let term = v.scale(T::of(lambda));
        aux = Some(match aux {
            Some(a) => a.add(term)?,
            None => term,
        });
    }
    match (parts.semantic, aux) {
        (Some(s), Some(a)) => s.add(a),
        (Some(s), None) => Ok(s),
        (None, Some(a)) => Ok(a),
        (None, None) => Err(Error::Config("total loss of an empty task set".into())),
    }
}

/// [`total_loss`] on plain numbers, summed in the same order.
pub fn total_loss_value(parts: &LossParts<f64>, w: &LossWeights) -> f64 {
    let aux = parts
        .weighted(w)
        .into_iter()
        .flatten()
        .map(|(v, l)| v * l)
        .reduce(|a, b| a + b);
    parts.semantic.unwrap_or(0.0) + aux.unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Tape, Tensor};

    #[test]
    fn cross_entropy_cases() {
        let tape = Tape::<f64>::new();
        let uniform = tape.constant(Tensor::full(&[1, 4, 2, 3], 0.25));
        let l = cross_entropy_loss(uniform, &[0, 1, 2, 3, 0, 1]).unwrap().item();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        // two pixels whose targets hold 0.5 and 0.25
        let probs = Tensor::new(&[1, 4, 2], vec![0.5, 0.25, 0.5, 0.25, 0.0, 0.25, 0.0, 0.25]).unwrap();
        let l = cross_entropy_loss(tape.constant(probs), &[0, 1]).unwrap().item();
        assert!((l - (-(0.5f64).ln() - (0.25f64).ln()) / 2.0).abs() < 1e-12);
        assert!((l - 1.0397).abs() < 1e-4);
        let onehot = Tensor::new(&[1, 4, 1], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(cross_entropy_loss(tape.constant(onehot.clone()), &[1]).unwrap().item() < 1e-12);
        assert!(matches!(
            cross_entropy_loss(tape.constant(onehot), &[4]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn l2_cases() {
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::new(&[2], vec![0.0, 0.0]).unwrap());
        let t = tape.constant(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        assert_eq!(l2_loss(z, t).unwrap().item(), 12.5);
        assert_eq!(l2_loss(t, t).unwrap().item(), 0.0);
        let c = 3.0;
        assert!((l2_loss(z.scale(c), t.scale(c)).unwrap().item() - c * c * 12.5).abs() < 1e-12);
        assert!(l2_loss(z, tape.constant(Tensor::zeros(&[3]))).is_err());
    }

    #[test]
    fn multiscale_cases() {
        let tape = Tape::<f64>::new();
        let w = LossWeights::default();
        let tone = Tensor::from_fn(&[1, 1024], |i| (i as f64 * 0.3).sin());
        let a = tape.constant(tone.clone());
        assert_eq!(multiscale_spectral_loss(a, tape.constant(tone), &w).unwrap().item(), 0.0);
        let silence = tape.constant(Tensor::zeros(&[1, 1024]));
        assert!(multiscale_spectral_loss(a, silence, &w).unwrap().item() > 0.0);
    }

    #[test]
    fn total_loss_weights() {
        let tape = Tape::<f64>::new();
        let one = tape.constant(Tensor::scalar(1.0));
        let w = LossWeights::default();
        let parts = LossParts {
            semantic: Some(one),
            depth: Some(one),
            motion: Some(one),
            s3r: Some(one),
        };
        assert_eq!(total_loss(&parts, &w).unwrap().item(), 1.6);
        assert_eq!(total_loss_value(&LossParts { semantic: Some(1.0), depth: Some(1.0), motion: Some(1.0), s3r: Some(1.0) }, &w), 1.6);
        let only = LossParts { semantic: Some(tape.constant(Tensor::scalar(0.7))), ..LossParts::default() };
        assert_eq!(total_loss(&only, &w).unwrap().item(), 0.7);
        assert_eq!(LossWeights::for_encoder(EncoderKind::Ddsp).lambda3, 0.02);
        assert_eq!(LossWeights::for_encoder(EncoderKind::Spectrogram).lambda3, 0.2);
    }
}
