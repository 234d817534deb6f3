//! 2-D convolution and its transpose via im2col + GEMM. Cross-correlation
//! convention, NCHW layout.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{gemm, Real, Tensor, Var};

/// Kernel footprint shared by [`conv2d`] and [`conv_transpose2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeometry {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            dilation: (dilation, dilation),
        }
    }

    fn axis_out(size: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
        let span = d * (k - 1) + 1;
        let padded = size + 2 * p;
        (padded >= span && s > 0).then(|| (padded - span) / s + 1)
    }

    /// Output size of a convolution over an `h x w` input.
    pub fn conv_output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            Self::axis_out(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0)?,
            Self::axis_out(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }

    /// Output size of the transposed convolution over an `h x w` input.
    pub fn transpose_output(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let f = |n: usize, k: usize, s: usize, p: usize, d: usize| {
            let full = (n - 1) * s + d * (k - 1) + 1;
            full.checked_sub(2 * p).filter(|&v| v > 0)
        };
        if h == 0 || w == 0 {
            return None;
        }
        Some((
            f(h, self.kernel.0, self.stride.0, self.padding.0, self.dilation.0)?,
            f(w, self.kernel.1, self.stride.1, self.padding.1, self.dilation.1)?,
        ))
    }
}

/// Per-image lowering between an image `(c, h, w)` and a column matrix
/// `(c*kh*kw, oh*ow)` where `(oh, ow)` is the convolution output grid.
struct Lowering {
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    g: ConvGeometry,
}

impl Lowering {
    fn rows(&self) -> usize {
        self.c * self.g.kernel.0 * self.g.kernel.1
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output range along one axis for kernel offset `off = i*d - p`.
    fn valid(out: usize, size: usize, stride: usize, off: isize) -> (usize, usize) {
        // need 0 <= o*stride + off < size
        let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(stride) };
        let hi_excl = if (size as isize) - off <= 0 {
            0
        } else {
            (((size as isize - off) as usize) + stride - 1) / stride
        };
        (lo.min(out), hi_excl.min(out))
    }

    fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        let (kh, kw) = self.g.kernel;
        let (sh, sw) = self.g.stride;
        let (ph, pw) = self.g.padding;
        let (dh, dw) = self.g.dilation;
        let ncols = self.cols();
        for c in 0..self.c {
            for i in 0..kh {
                let oy_off = (i * dh) as isize - ph as isize;
                let (ylo, yhi) = Self::valid(self.oh, self.h, sh, oy_off);
                for j in 0..kw {
                    let ox_off = (j * dw) as isize - pw as isize;
                    let (xlo, xhi) = Self::valid(self.ow, self.w, sw, ox_off);
                    let row = ((c * kh + i) * kw + j) * ncols;
                    let dst = &mut cols[row..row + ncols];
                    dst.iter_mut().for_each(|v| *v = T::zero());
                    for oy in ylo..yhi {
                        let iy = (oy * sh) as isize + oy_off;
                        let src_row = (c * self.h + iy as usize) * self.w;
                        let drow = oy * self.ow;
                        for ox in xlo..xhi {
                            let ix = ((ox * sw) as isize + ox_off) as usize;
                            dst[drow + ox] = img[src_row + ix];
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        let (kh, kw) = self.g.kernel;
        let (sh, sw) = self.g.stride;
        let (ph, pw) = self.g.padding;
        let (dh, dw) = self.g.dilation;
        let ncols = self.cols();
        for c in 0..self.c {
            for i in 0..kh {
                let oy_off = (i * dh) as isize - ph as isize;
                let (ylo, yhi) = Self::valid(self.oh, self.h, sh, oy_off);
                for j in 0..kw {
                    let ox_off = (j * dw) as isize - pw as isize;
                    let (xlo, xhi) = Self::valid(self.ow, self.w, sw, ox_off);
                    let row = ((c * kh + i) * kw + j) * ncols;
                    let src = &cols[row..row + ncols];
                    for oy in ylo..yhi {
                        let iy = (oy * sh) as isize + oy_off;
                        let dst_row = (c * self.h + iy as usize) * self.w;
                        let srow = oy * self.ow;
                        for ox in xlo..xhi {
                            let ix = ((ox * sw) as isize + ox_off) as usize;
                            img[dst_row + ix] += src[srow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn channel_sums<T: Real>(g: &Tensor<T>, channels: usize) -> Tensor<T> {
    let n = g.shape()[0];
    let plane = g.numel() / (n * channels);
    let mut acc = vec![T::zero(); channels];
    for b in 0..n {
        for (c, a) in acc.iter_mut().enumerate() {
            let base = (b * channels + c) * plane;
            *a += g.data()[base..base + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::new(&[channels], acc).unwrap()
}

fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        out[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn bias_value<T: Real>(bias: Option<Var<'_, T>>, channels: usize) -> Result<Option<Arc<Tensor<T>>>> {
    match bias {
        None => Ok(None),
        Some(b) => {
            let v = b.value();
            if v.shape() != [channels] {
                return Err(Error::Config(format!(
                    "bias shape {:?}, expected [{channels}]",
                    v.shape()
                )));
            }
            Ok(Some(v))
        }
    }
}

/// `x (N, C, H, W)`, `weight (O, C, kh, kw)`, optional `bias (O)`.
pub fn conv2d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    g: ConvGeometry,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let wv = weight.value();
    if xv.rank() != 4 || wv.rank() != 4 {
        return Err(Error::Config("conv2d expects NCHW input and OIHW weights".into()));
    }
    let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    let o = wv.shape()[0];
    if wv.shape()[1] != c || (wv.shape()[2], wv.shape()[3]) != g.kernel {
        return Err(Error::Config(format!(
            "conv2d weight {:?} does not fit input {:?} with kernel {:?}",
            wv.shape(),
            xv.shape(),
            g.kernel
        )));
    }
    let (oh, ow) = g.conv_output(h, w).ok_or_else(|| {
        Error::Config(format!("conv2d: input {h}x{w} too small for {g:?}"))
    })?;
    let bv = bias_value(bias, o)?;
    let low = Lowering { c, h, w, oh, ow, g };
    let (rows, ncols) = (low.rows(), low.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut out = vec![T::zero(); n * o * ncols];
    let in_plane = c * h * w;
    for b in 0..n {
        low.im2col(&xv.data()[b * in_plane..(b + 1) * in_plane], &mut cols);
        let dst = &mut out[b * o * ncols..(b + 1) * o * ncols];
        gemm(o, rows, ncols, wv.data(), false, &cols, false, dst, false);
        if let Some(bv) = &bv {
            add_channel_bias(dst, bv.data(), ncols);
        }
    }
    let y = Tensor::new(&[n, o, oh, ow], out)?;
    let mut parents = vec![x, weight];
    parents.extend(bias);
    Ok(x.tape.push_op(
        y,
        &parents,
        Box::new(move |gy, mask| {
            let mut dx = mask[0].then(|| vec![T::zero(); xv.numel()]);
            let mut dw = mask[1].then(|| vec![T::zero(); wv.numel()]);
            let mut cols = vec![T::zero(); rows * ncols];
            for b in 0..n {
                let gb = &gy.data()[b * o * ncols..(b + 1) * o * ncols];
                if let Some(dw) = dw.as_mut() {
                    low.im2col(&xv.data()[b * in_plane..(b + 1) * in_plane], &mut cols);
                    gemm(o, ncols, rows, gb, false, &cols, true, dw, true);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(rows, o, ncols, wv.data(), true, gb, false, &mut cols, false);
                    low.col2im(&cols, &mut dx[b * in_plane..(b + 1) * in_plane]);
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::new(xv.shape(), d).unwrap()),
                dw.map(|d| Tensor::new(wv.shape(), d).unwrap()),
            ];
            if mask.len() == 3 {
                grads.push(mask[2].then(|| channel_sums(gy, o)));
            }
            grads
        }),
    ))
}

/// Adjoint of [`conv2d`] with the same geometry. `x (N, Cin, H, W)`,
/// `weight (Cin, Cout, kh, kw)`, optional `bias (Cout)`.
pub fn conv_transpose2d<'t, T: Real>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    g: ConvGeometry,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let wv = weight.value();
    if xv.rank() != 4 || wv.rank() != 4 {
        return Err(Error::Config(
            "conv_transpose2d expects NCHW input and (Cin, Cout, kh, kw) weights".into(),
        ));
    }
    let (n, cin, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
    if wv.shape()[0] != cin || (wv.shape()[2], wv.shape()[3]) != g.kernel {
        return Err(Error::Config(format!(
            "conv_transpose2d weight {:?} does not fit input {:?}",
            wv.shape(),
            xv.shape()
        )));
    }
    let cout = wv.shape()[1];
    let (oh, ow) = g.transpose_output(h, w).ok_or_else(|| {
        Error::Config(format!("conv_transpose2d: no valid output for {h}x{w} with {g:?}"))
    })?;
    // the forward conv of this geometry maps (oh, ow) back onto (h, w)
    if g.conv_output(oh, ow) != Some((h, w)) {
        return Err(Error::Config(format!(
            "conv_transpose2d geometry {g:?} is not invertible for {h}x{w}"
        )));
    }
    let bv = bias_value(bias, cout)?;
    let low = Lowering { c: cout, h: oh, w: ow, oh: h, ow: w, g };
    let (rows, ncols) = (low.rows(), low.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let out_plane = cout * oh * ow;
    let in_plane = cin * ncols;
    let mut out = vec![T::zero(); n * out_plane];
    for b in 0..n {
        gemm(rows, cin, ncols, wv.data(), true, &xv.data()[b * in_plane..(b + 1) * in_plane], false, &mut cols, false);
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        low.col2im(&cols, dst);
        if let Some(bv) = &bv {
            add_channel_bias(dst, bv.data(), oh * ow);
        }
    }
    let y = Tensor::new(&[n, cout, oh, ow], out)?;
    let mut parents = vec![x, weight];
    parents.extend(bias);
    Ok(x.tape.push_op(
        y,
        &parents,
        Box::new(move |gy, mask| {
            let mut dx = mask[0].then(|| vec![T::zero(); xv.numel()]);
            let mut dw = mask[1].then(|| vec![T::zero(); wv.numel()]);
            let mut cols = vec![T::zero(); rows * ncols];
            for b in 0..n {
                low.im2col(&gy.data()[b * out_plane..(b + 1) * out_plane], &mut cols);
                if let Some(dx) = dx.as_mut() {
                    gemm(cin, rows, ncols, wv.data(), false, &cols, false, &mut dx[b * in_plane..(b + 1) * in_plane], false);
                }
                if let Some(dw) = dw.as_mut() {
                    gemm(cin, ncols, rows, &xv.data()[b * in_plane..(b + 1) * in_plane], false, &cols, true, dw, true);
                }
            }
            let mut grads = vec![
                dx.map(|d| Tensor::new(xv.shape(), d).unwrap()),
                dw.map(|d| Tensor::new(wv.shape(), d).unwrap()),
            ];
            if mask.len() == 3 {
                grads.push(mask[2].then(|| channel_sums(gy, cout)));
            }
            grads
        }),
    ))
}
