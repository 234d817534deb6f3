use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor, Var};

/// Per-channel batch statistics from a training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, for running-statistics updates.
    pub var: Vec<T>,
}

/// Batch normalization over axis 1 of `x (N, C, ...)`.
///
/// Training mode normalizes by batch statistics and returns them; inference
/// mode uses `running_mean`/`running_var`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm<'t, T: Real>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running_mean: &[T],
    running_var: &[T],
    training: bool,
    eps: T,
) -> Result<(Var<'t, T>, Option<BatchStats<T>>)> {
    let xv = x.value();
    if xv.rank() < 2 {
        return Err(Error::Config(format!("batch_norm needs (N, C, ...), got {:?}", xv.shape())));
    }
    let (n, c) = (xv.shape()[0], xv.shape()[1]);
    if n == 0 {
        return Err(Error::InvalidInput("batch_norm on an empty batch".into()));
    }
    let (gv, bv) = (gamma.value(), beta.value());
    if gv.shape() != [c] || bv.shape() != [c] || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Config(format!(
            "batch_norm state does not match {c} channels"
        )));
    }
    let inner: usize = xv.shape()[2..].iter().product();
    let m = n * inner;
    let at = move |b: usize, ch: usize| (b * c + ch) * inner;
    let (mean, var, stats) = if training {
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = 0.0f64;
            for b in 0..n {
                s += xv.data()[at(b, ch)..at(b, ch) + inner].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mu = s / m as f64;
            let mut ss = 0.0f64;
            for b in 0..n {
                ss += xv.data()[at(b, ch)..at(b, ch) + inner]
                    .iter()
                    .map(|v| (v.as_f64() - mu).powi(2))
                    .sum::<f64>();
            }
            mean[ch] = T::of(mu);
            var[ch] = T::of(ss / m as f64);
        }
        let unbiased = var
            .iter()
            .map(|&v| if m > 1 { v * T::of(m as f64 / (m - 1) as f64) } else { v })
            .collect();
        let stats = BatchStats { mean: mean.clone(), var: unbiased };
        (mean, var, Some(stats))
    } else {
        (running_mean.to_vec(), running_var.to_vec(), None)
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xv.numel()];
    let mut y = vec![T::zero(); xv.numel()];
    for b in 0..n {
        for ch in 0..c {
            let r = at(b, ch)..at(b, ch) + inner;
            let (mu, is, g, be) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
            for i in r {
                let h = (xv.data()[i] - mu) * is;
                xhat[i] = h;
                y[i] = g * h + be;
            }
        }
    }
    let xhat = Arc::new(xhat);
    let out = x.tape.push_op(
        Tensor::new(xv.shape(), y)?,
        &[x, gamma, beta],
        Box::new(move |gy, mask| {
            let g = gy.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    for i in at(b, ch)..at(b, ch) + inner {
                        dbeta[ch] += g[i];
                        dgamma[ch] += g[i] * xhat[i];
                    }
                }
            }
            let dx = mask[0].then(|| {
                let mut dx = vec![T::zero(); g.len()];
                let mf = T::of(m as f64);
                for ch in 0..c {
                    let scale = gv.data()[ch] * inv_std[ch];
                    let (mg, mgx) = (dbeta[ch] / mf, dgamma[ch] / mf);
                    for b in 0..n {
                        for i in at(b, ch)..at(b, ch) + inner {
                            dx[i] = if training {
                                scale * (g[i] - mg - xhat[i] * mgx)
                            } else {
                                scale * g[i]
                            };
                        }
                    }
                }
                Tensor::new(gy.shape(), dx).unwrap()
            });
            vec![
                dx,
                mask[1].then(|| Tensor::new(&[c], dgamma.clone()).unwrap()),
                mask[2].then(|| Tensor::new(&[c], dbeta.clone()).unwrap()),
            ]
        }),
    );
    Ok((out, stats))
}
