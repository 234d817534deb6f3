//! Differentiable STFT and ISTFT. Complex values are carried as a size-2
//! axis: spectrograms are `(B, 2, bins, frames)` with real part first.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dsp::check_invertible;
use crate::dsp::{frame_count, StftParams};
use crate::error::{Error, Result};
use crate::nn::{Real, Tensor, Var};

struct Plan<T: Real> {
    n: usize,
    hop: usize,
    bins: usize,
    window: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Plan<T> {
    fn new(p: &StftParams) -> Result<Self> {
        p.validate()?;
        let mut planner = FftPlanner::<T>::new();
        Ok(Plan {
            n: p.window_size,
            hop: p.hop_length,
            bins: p.bins(),
            window: p.window.coefficients(p.window_size).into_iter().map(T::of).collect(),
            fwd: planner.plan_fft_forward(p.window_size),
            inv: planner.plan_fft_inverse(p.window_size),
        })
    }
}

fn zero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Short-time Fourier transform of each row of `x (B, L)`.
pub fn stft<'t, T: Real>(x: Var<'t, T>, p: &StftParams) -> Result<Var<'t, T>> {
    let xv = x.value();
    if xv.rank() != 2 {
        return Err(Error::Config(format!("stft expects (B, L), got {:?}", xv.shape())));
    }
    let (batch, len) = (xv.shape()[0], xv.shape()[1]);
    if len < p.window_size {
        return Err(Error::InvalidInput(format!(
            "signal of {len} samples is shorter than one {}-sample window",
            p.window_size
        )));
    }
    let plan = Plan::<T>::new(p)?;
    let frames = frame_count(len, p);
    let (n, bins) = (plan.n, plan.bins);
    let plane = bins * frames;
    let mut out = vec![T::zero(); batch * 2 * plane];
    let mut buf = vec![zero::<T>(); n];
    for b in 0..batch {
        let row = &xv.data()[b * len..(b + 1) * len];
        for t in 0..frames {
            let start = t * plan.hop;
            for i in 0..n {
                buf[i] = Complex::new(row[start + i] * plan.window[i], T::zero());
            }
            plan.fwd.process(&mut buf);
            for k in 0..bins {
                out[(b * 2) * plane + k * frames + t] = buf[k].re;
                out[(b * 2 + 1) * plane + k * frames + t] = buf[k].im;
            }
        }
    }
    Ok(x.tape.push_op(
        Tensor::new(&[batch, 2, bins, frames], out)?,
        &[x],
        Box::new(move |g, _| {
            let mut d = vec![T::zero(); batch * len];
            let mut buf = vec![zero::<T>(); n];
            for b in 0..batch {
                for t in 0..frames {
                    buf.iter_mut().for_each(|v| *v = zero());
                    for k in 0..bins {
                        buf[k] = Complex::new(
                            g.data()[(b * 2) * plane + k * frames + t],
                            g.data()[(b * 2 + 1) * plane + k * frames + t],
                        );
                    }
                    plan.inv.process(&mut buf);
                    let start = b * len + t * plan.hop;
                    for i in 0..n {
                        d[start + i] += buf[i].re * plan.window[i];
                    }
                }
            }
            vec![Some(Tensor::new(&[batch, len], d).unwrap())]
        }),
    ))
}

/// Overlap-add inverse of [`stft`] with squared-window compensation,
/// matching [`crate::dsp::istft`].
pub fn istft<'t, T: Real>(s: Var<'t, T>, p: &StftParams) -> Result<Var<'t, T>> {
    let sv = s.value();
    let plan = Plan::<T>::new(p)?;
    check_invertible(p)?;
    if sv.rank() != 4 || sv.shape()[1] != 2 || sv.shape()[2] != plan.bins || sv.shape()[3] == 0 {
        return Err(Error::Config(format!(
            "istft expects (B, 2, {}, frames), got {:?}",
            plan.bins,
            sv.shape()
        )));
    }
    let (batch, frames) = (sv.shape()[0], sv.shape()[3]);
    let (n, bins) = (plan.n, plan.bins);
    let plane = bins * frames;
    let len = n + (frames - 1) * plan.hop;
    let mut wsum = vec![0.0f64; len];
    for t in 0..frames {
        for i in 0..n {
            wsum[t * plan.hop + i] += plan.window[i].as_f64().powi(2);
        }
    }
    let peak = wsum.iter().cloned().fold(0.0, f64::max);
    let inv_wsum: Vec<T> = wsum
        .iter()
        .map(|&w| if w > 1e-8 * peak { T::of(1.0 / w) } else { T::zero() })
        .collect();
    let scale = T::one() / T::of(n as f64);
    let mut out = vec![T::zero(); batch * len];
    let mut buf = vec![zero::<T>(); n];
    for b in 0..batch {
        for t in 0..frames {
            for k in 0..bins {
                buf[k] = Complex::new(
                    sv.data()[(b * 2) * plane + k * frames + t],
                    sv.data()[(b * 2 + 1) * plane + k * frames + t],
                );
            }
            for k in bins..n {
                buf[k] = buf[n - k].conj();
            }
            plan.inv.process(&mut buf);
            let start = t * plan.hop;
            for i in 0..n {
                out[b * len + start + i] += buf[i].re * scale * plan.window[i];
            }
        }
        for (o, &iw) in out[b * len..(b + 1) * len].iter_mut().zip(&inv_wsum) {
            *o *= iw;
        }
    }
    Ok(s.tape.push_op(
        Tensor::new(&[batch, len], out)?,
        &[s],
        Box::new(move |g, _| {
            let mut d = vec![T::zero(); batch * 2 * plane];
            let mut buf = vec![zero::<T>(); n];
            let two = T::of(2.0);
            for b in 0..batch {
                for t in 0..frames {
                    let start = b * len + t * plan.hop;
                    for i in 0..n {
                        let h = g.data()[start + i] * inv_wsum[t * plan.hop + i] * plan.window[i];
                        buf[i] = Complex::new(h, T::zero());
                    }
                    plan.fwd.process(&mut buf);
                    for k in 0..bins {
                        let edge = k == 0 || 2 * k == n;
                        let c = if edge { scale } else { two * scale };
                        d[(b * 2) * plane + k * frames + t] = buf[k].re * c;
                        d[(b * 2 + 1) * plane + k * frames + t] =
                            if edge { T::zero() } else { buf[k].im * c };
                    }
                }
            }
            vec![Some(Tensor::new(&[batch, 2, bins, frames], d).unwrap())]
        }),
    ))
}

/// `sqrt(re^2 + im^2 + eps)` of a `(B, 2, bins, frames)` spectrogram.
pub fn magnitude<'t, T: Real>(s: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
    let re = s.select(1, 0)?;
    let im = s.select(1, 1)?;
    Ok(re.square().add(im.square())?.sqrt_eps(eps))
}
