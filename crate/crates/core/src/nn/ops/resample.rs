use crate::error::{Error, Result};
use crate::nn::tensor::split_dims;
use crate::nn::{Real, Tensor, Var};

/// Two-tap linear interpolation weights (half-pixel centers, edge clamped).
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<'t, T: Real> Var<'t, T> {
    /// Linear resampling of one axis to `len` entries.
    pub fn interp_axis(self, axis: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.rank() || len == 0 || x.shape()[axis] == 0 {
            return Err(Error::Config(format!(
                "cannot resample axis {axis} of {:?} to {len}",
                x.shape()
            )));
        }
        let (outer, dim, inner) = split_dims(x.shape(), axis);
        if dim == len {
            return Ok(self);
        }
        let taps: Vec<(usize, usize, T)> = taps(dim, len)
            .into_iter()
            .map(|(a, b, l)| (a, b, T::of(l)))
            .collect();
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let mut y = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            for (j, &(i0, i1, l)) in taps.iter().enumerate() {
                let dst = (o * len + j) * inner;
                let (s0, s1) = ((o * dim + i0) * inner, (o * dim + i1) * inner);
                for k in 0..inner {
                    y[dst + k] = x.data()[s0 + k] * (T::one() - l) + x.data()[s1 + k] * l;
                }
            }
        }
        let in_shape = x.shape().to_vec();
        Ok(self.tape.push_op(
            Tensor::new(&shape, y)?,
            &[self],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); outer * dim * inner];
                for o in 0..outer {
                    for (j, &(i0, i1, l)) in taps.iter().enumerate() {
                        let src = (o * len + j) * inner;
                        let (d0, d1) = ((o * dim + i0) * inner, (o * dim + i1) * inner);
                        for k in 0..inner {
                            let gv = g.data()[src + k];
                            d[d0 + k] += gv * (T::one() - l);
                            d[d1 + k] += gv * l;
                        }
                    }
                }
                vec![Some(Tensor::new(&in_shape, d).unwrap())]
            }),
        ))
    }

    /// Bilinear resize of the two trailing axes of an NCHW tensor.
    pub fn resize_bilinear(self, h: usize, w: usize) -> Result<Var<'t, T>> {
        let r = self.value().rank();
        if r < 2 {
            return Err(Error::Config("resize_bilinear needs at least 2 axes".into()));
        }
        self.interp_axis(r - 2, h)?.interp_axis(r - 1, w)
    }
}
