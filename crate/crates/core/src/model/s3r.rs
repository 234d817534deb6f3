use ndarray::Array3;
use rustfft::num_complex::Complex64;

use crate::dsp::{istft, ComplexSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::nn::{concat, stack, Real, Var};

/// Left and right waveforms of one rig pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralPair {
    pub left: Waveform,
    pub right: Waveform,
}

/// Complex product of masks `(N, 4P, bins, frames)` with reference
/// spectrograms `(N, 2, 2, bins, frames)`, giving difference spectrograms
/// `(N, P, 2, 2, bins, frames)`.
pub fn apply_complex_mask<'t, T: Real>(mask: Var<'t, T>, reference: Var<'t, T>) -> Result<Var<'t, T>> {
    let ms = mask.shape();
    let rs = reference.shape();
    if ms.len() != 4 || ms[1] % 4 != 0 || ms[1] == 0 || rs.len() != 5 || rs[..3] != [ms[0], 2, 2] || rs[3..] != ms[2..]
    {
        return Err(Error::Config(format!(
            "mask {ms:?} does not fit reference spectrograms {rs:?}"
        )));
    }
    let (n, pairs, bins, frames) = (ms[0], ms[1] / 4, ms[2], ms[3]);
    let mut parts = Vec::with_capacity(2 * pairs);
    for p in 0..pairs {
        for ear in 0..2 {
            let m = mask.narrow(1, 4 * p + 2 * ear, 2)?;
            let (mr, mi) = (m.select(1, 0)?, m.select(1, 1)?);
            let r = reference.select(1, ear)?;
            let (sr, si) = (r.select(1, 0)?, r.select(1, 1)?);
            let re = mr.mul(sr)?.sub(mi.mul(si)?)?;
            let im = mr.mul(si)?.add(mi.mul(sr)?)?;
            // (2, N, bins, frames) -> (N, 1, 2, bins, frames)
            parts.push(stack(&[re, im])?.permute(&[1, 0, 2, 3])?.reshape(&[n, 1, 2, bins, frames])?);
        }
    }
    concat(&parts, 1)?.reshape(&[n, pairs, 2, 2, bins, frames])
}

/// Per-pair complex masks over a spectrogram grid, stored as planes
/// `(4P, bins, frames)` with plane `4p + 2·ear + {0: real, 1: imaginary}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMask {
    pub planes: Array3<f64>,
}

impl ComplexMask {
    pub fn new(planes: Array3<f64>) -> Result<Self> {
        if planes.dim().0 == 0 || planes.dim().0 % 4 != 0 {
            return Err(Error::Config(format!("mask needs 4P planes, got {}", planes.dim().0)));
        }
        Ok(ComplexMask { planes })
    }

    pub fn zeros(pairs: usize, bins: usize, frames: usize) -> Self {
        ComplexMask {
            planes: Array3::zeros((4 * pairs, bins, frames)),
        }
    }

    pub fn pairs(&self) -> usize {
        self.planes.dim().0 / 4
    }

    /// Mask value for `pair`, `ear` (0 left, 1 right) at one cell.
    pub fn at(&self, pair: usize, ear: usize, bin: usize, frame: usize) -> Complex64 {
        let k = 4 * pair + 2 * ear;
        Complex64::new(self.planes[[k, bin, frame]], self.planes[[k + 1, bin, frame]])
    }

    /// The mask turning each reference ear into its difference with the
    /// matching target ear, `(X_ref - X_target) / X_ref`, and zero where the
    /// reference has no energy.
    pub fn oracle(reference: [&ComplexSpectrogram; 2], targets: &[[&ComplexSpectrogram; 2]]) -> Result<Self> {
        let (bins, frames) = reference[0].data.dim();
        let mut m = ComplexMask::zeros(targets.len(), bins, frames);
        for (p, pair) in targets.iter().enumerate() {
            for ear in 0..2 {
                let (x, y) = (&reference[ear].data, &pair[ear].data);
                if x.dim() != (bins, frames) || y.dim() != (bins, frames) {
                    return Err(Error::Config("spectrogram grids differ".into()));
                }
                for ((b, t), &xv) in x.indexed_iter() {
                    if xv.norm_sqr() > 1e-300 {
                        let v = (xv - y[[b, t]]) / xv;
                        m.planes[[4 * p + 2 * ear, b, t]] = v.re;
                        m.planes[[4 * p + 2 * ear + 1, b, t]] = v.im;
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Target-pair waveforms from masks over the reference pair: each ear's
/// difference spectrogram is the mask times the reference spectrogram, its
/// inverse transform is the difference signal, and the target is the
/// reference minus that difference.
///
/// Samples past the last full analysis window carry no difference estimate
/// and copy the reference.
pub fn s3r_reconstruct(
    mask: &ComplexMask,
    reference_specs: [&ComplexSpectrogram; 2],
    reference_waves: [&Waveform; 2],
) -> Result<Vec<BinauralPair>> {
    let (_, bins, frames) = mask.planes.dim();
    for ear in 0..2 {
        if reference_specs[ear].data.dim() != (bins, frames) {
            return Err(Error::Config(format!(
                "mask grid ({bins}, {frames}) does not match spectrogram {:?}",
                reference_specs[ear].data.dim()
            )));
        }
    }
    (0..mask.pairs())
        .map(|p| {
            let mut ears = Vec::with_capacity(2);
            for ear in 0..2 {
                let spec = reference_specs[ear];
                let mut diff = spec.clone();
                let k = 4 * p + 2 * ear;
                for ((b, t), d) in diff.data.indexed_iter_mut() {
                    let mv = Complex64::new(mask.planes[[k, b, t]], mask.planes[[k + 1, b, t]]);
                    *d = mv * spec.data[[b, t]];
                }
                let dw = istft(&diff)?;
                let wave = reference_waves[ear];
                let mut out = wave.clone();
                let n = dw.len().min(out.len());
                for (o, d) in out.samples[..n].iter_mut().zip(&dw.samples[..n]) {
                    *o -= d;
                }
                ears.push(out);
            }
            let right = ears.pop().unwrap();
            let left = ears.pop().unwrap();
            Ok(BinauralPair { left, right })
        })
        .collect()
}

/// Stacks mask values from a `(4P, bins, frames)` slice of a batch output.
pub fn mask_from_tensor(data: &[f64], pairs: usize, bins: usize, frames: usize) -> Result<ComplexMask> {
    let planes = Array3::from_shape_vec((4 * pairs, bins, frames), data.to_vec())
        .map_err(|e| Error::Config(format!("mask tensor: {e}")))?;
    ComplexMask::new(planes)
}
