use crate::error::{Error, Result};
use crate::nn::tensor::split_dims;
use crate::nn::{Real, Tensor, Var};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(x.data()[src]);
        // odometer increment over the output index
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out).unwrap()
}

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshaped(shape)?;
        Ok(self.tape.push_op(
            y,
            &[self],
            Box::new(move |g, _| vec![Some(g.clone().reshaped(&old).unwrap())]),
        ))
    }

    /// Reorders dimensions: output dim `i` is input dim `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let mut seen = vec![false; x.rank()];
        if axes.len() != x.rank() || axes.iter().any(|&a| a >= x.rank() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Config(format!(
                "{axes:?} is not a permutation of the axes of {:?}",
                x.shape()
            )));
        }
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let y = permute_data(&x, axes);
        Ok(self.tape.push_op(
            y,
            &[self],
            Box::new(move |g, _| vec![Some(permute_data(g, &inverse))]),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.rank() || start + len > x.shape()[axis] {
            return Err(Error::Config(format!(
                "narrow({axis}, {start}, {len}) out of range for {:?}",
                x.shape()
            )));
        }
        let (outer, dim, inner) = x.split_at_axis(axis);
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let in_shape = x.shape().to_vec();
        Ok(self.tape.push_op(
            Tensor::new(&shape, out)?,
            &[self],
            Box::new(move |g, _| {
                let mut d = Tensor::zeros(&in_shape);
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    d.data_mut()[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Select one index along `axis`, dropping that dimension.
    pub fn select(self, axis: usize, index: usize) -> Result<Var<'t, T>> {
        let mut shape = self.shape();
        let v = self.narrow(axis, index, 1)?;
        shape.remove(axis);
        v.reshape(&shape)
    }
}

/// Joins variables along `axis`; all other dimensions must agree.
pub fn concat<'t, T: Real>(vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = vars
        .first()
        .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
    let tape = first.tape;
    let values: Vec<_> = vars.iter().map(|v| v.value()).collect();
    let base_shape = values[0].shape().to_vec();
    if axis >= base_shape.len() {
        return Err(Error::Config(format!("concat axis {axis} out of range")));
    }
    for v in &values {
        let s = v.shape();
        if s.len() != base_shape.len()
            || s.iter()
                .zip(&base_shape)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::Config(format!(
                "concat along {axis}: {s:?} vs {base_shape:?}"
            )));
        }
    }
    let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = sizes.iter().sum();
    let mut shape = base_shape.clone();
    shape[axis] = total;
    let (outer, _, inner) = split_dims(&shape, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &s) in values.iter().zip(&sizes) {
            out.extend_from_slice(&v.data()[o * s * inner..(o + 1) * s * inner]);
        }
    }
    let part_shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(tape.push_op(
        Tensor::new(&shape, out)?,
        vars,
        Box::new(move |g, mask| {
            let mut grads: Vec<Vec<T>> = sizes
                .iter()
                .zip(mask)
                .map(|(&s, &m)| if m { Vec::with_capacity(outer * s * inner) } else { Vec::new() })
                .collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (i, &s) in sizes.iter().enumerate() {
                    if mask[i] {
                        grads[i].extend_from_slice(&g.data()[off..off + s * inner]);
                    }
                    off += s * inner;
                }
            }
            grads
                .into_iter()
                .zip(&part_shapes)
                .zip(mask)
                .map(|((d, sh), &m)| m.then(|| Tensor::new(sh, d).unwrap()))
                .collect()
        }),
    ))
}

/// Stacks equally shaped variables along a new leading axis.
pub fn stack<'t, T: Real>(vars: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let lifted: Result<Vec<_>> = vars
        .iter()
        .map(|v| {
            let mut s = vec![1];
            s.extend(v.shape());
            v.reshape(&s)
        })
        .collect();
    concat(&lifted?, 0)
}
