//! Elementwise arithmetic, activations, reductions and matrix products.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::tensor::split_dims;
use crate::nn::{gemm, Real, Tensor, Var};

fn check_same(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if a != b {
        return Err(Error::Config(format!("{op}: shape {a:?} vs {b:?}")));
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    fn unary(
        self,
        f: impl Fn(T) -> T,
        // derivative expressed through (input, output)
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'t, T> {
        let x = self.value();
        let y = x.map(f);
        let y_saved = Arc::new(y.clone());
        self.tape.push_op(
            y,
            &[self],
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(y_saved.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(g.shape(), data).unwrap())]
            }),
        )
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same(a.shape(), b.shape(), "add")?;
        let y = a.zip_map(&b, |x, y| x + y);
        Ok(self.tape.push_op(
            y,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same(a.shape(), b.shape(), "sub")?;
        let y = a.zip_map(&b, |x, y| x - y);
        Ok(self.tape.push_op(
            y,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        ))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        check_same(a.shape(), b.shape(), "mul")?;
        let y = a.zip_map(&b, |x, y| x * y);
        Ok(self.tape.push_op(
            y,
            &[self, other],
            Box::new(move |g, mask| {
                vec![
                    mask[0].then(|| g.zip_map(&b, |g, b| g * b)),
                    mask[1].then(|| g.zip_map(&a, |g, a| g * a)),
                ]
            }),
        ))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(self, c: Arc<Tensor<T>>) -> Result<Var<'t, T>> {
        let a = self.value();
        check_same(a.shape(), c.shape(), "mul_const")?;
        let y = a.zip_map(&c, |x, y| x * y);
        Ok(self.tape.push_op(
            y,
            &[self],
            Box::new(move |g, _| vec![Some(g.zip_map(&c, |g, c| g * c))]),
        ))
    }

    /// `self - c` for a constant tensor `c`.
    pub fn sub_const(self, c: &Tensor<T>) -> Result<Var<'t, T>> {
        let a = self.value();
        check_same(a.shape(), c.shape(), "sub_const")?;
        let y = a.zip_map(c, |x, y| x - y);
        Ok(self
            .tape
            .push_op(y, &[self], Box::new(|g, _| vec![Some(g.clone())])))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|v| v * c);
        self.tape
            .push_op(y, &[self], Box::new(move |g, _| vec![Some(g.map(|v| v * c))]))
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|v| v + c);
        self.tape
            .push_op(y, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }

    pub fn neg(self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        self.unary(
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn square(self) -> Var<'t, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn abs(self) -> Var<'t, T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// `sqrt(x + eps)`.
    pub fn sqrt_eps(self, eps: T) -> Var<'t, T> {
        self.unary(move |x| (x + eps).sqrt(), |_, y| T::of(0.5) / y)
    }

    /// `ln(x + eps)`.
    pub fn ln_eps(self, eps: T) -> Var<'t, T> {
        self.unary(move |x| (x + eps).ln(), move |x, _| T::one() / (x + eps))
    }

    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape.push_op(
            Tensor::scalar(x.sum()),
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.value().numel();
        self.sum().scale(T::one() / T::of(n as f64))
    }

    /// Adds `b[i]` to every element whose index along `axis` is `i`.
    pub fn add_bias(self, b: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let bv = b.value();
        if axis >= x.rank() || bv.shape() != [x.shape()[axis]] {
            return Err(Error::Config(format!(
                "bias of shape {:?} does not match axis {axis} of {:?}",
                bv.shape(),
                x.shape()
            )));
        }
        let (outer, dim, inner) = x.split_at_axis(axis);
        let mut y = (*x).clone();
        for o in 0..outer {
            for c in 0..dim {
                let bc = bv.data()[c];
                let base = (o * dim + c) * inner;
                y.data_mut()[base..base + inner].iter_mut().for_each(|v| *v += bc);
            }
        }
        Ok(self.tape.push_op(
            y,
            &[self, b],
            Box::new(move |g, mask| {
                let gb = mask[1].then(|| {
                    let mut acc = vec![T::zero(); dim];
                    for o in 0..outer {
                        for (c, a) in acc.iter_mut().enumerate() {
                            let base = (o * dim + c) * inner;
                            *a += g.data()[base..base + inner].iter().copied().sum::<T>();
                        }
                    }
                    Tensor::new(&[dim], acc).unwrap()
                });
                vec![Some(g.clone()), gb]
            }),
        ))
    }

    /// 2-D product `op(self) * op(other)`.
    pub fn matmul(self, other: Var<'t, T>, trans_a: bool, trans_b: bool) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 {
            return Err(Error::Config("matmul needs 2-D operands".into()));
        }
        let (m, ka) = if trans_a { (a.shape()[1], a.shape()[0]) } else { (a.shape()[0], a.shape()[1]) };
        let (kb, n) = if trans_b { (b.shape()[1], b.shape()[0]) } else { (b.shape()[0], b.shape()[1]) };
        if ka != kb {
            return Err(Error::Config(format!(
                "matmul inner dims {ka} vs {kb} ({:?} x {:?})",
                a.shape(),
                b.shape()
            )));
        }
        let k = ka;
        let mut y = vec![T::zero(); m * n];
        gemm(m, k, n, a.data(), trans_a, b.data(), trans_b, &mut y, false);
        Ok(self.tape.push_op(
            Tensor::new(&[m, n], y)?,
            &[self, other],
            Box::new(move |g, mask| {
                let ga = mask[0].then(|| {
                    // dA = g * op(B)^T, laid out like A
                    let mut d = vec![T::zero(); m * k];
                    if trans_a {
                        // A stored k x m: dA^T = op(B) * g^T
                        gemm(k, n, m, b.data(), trans_b, g.data(), true, &mut d, false);
                    } else {
                        gemm(m, n, k, g.data(), false, b.data(), !trans_b, &mut d, false);
                    }
                    Tensor::new(a.shape(), d).unwrap()
                });
                let gb = mask[1].then(|| {
                    let mut d = vec![T::zero(); k * n];
                    if trans_b {
                        // B stored n x k: dB^T = g^T * op(A)
                        gemm(n, m, k, g.data(), true, a.data(), trans_a, &mut d, false);
                    } else {
                        gemm(k, m, n, a.data(), !trans_a, g.data(), false, &mut d, false);
                    }
                    Tensor::new(b.shape(), d).unwrap()
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Normalized exponentials along `axis`, shifted by the max for stability.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::Config(format!(
                "softmax axis {axis} out of range for {:?}",
                x.shape()
            )));
        }
        let (outer, dim, inner) = split_dims(x.shape(), axis);
        let mut y = vec![T::zero(); x.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |c: usize| (o * dim + c) * inner + i;
                let mx = (0..dim).map(|c| x.data()[idx(c)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for c in 0..dim {
                    let e = (x.data()[idx(c)] - mx).exp();
                    y[idx(c)] = e;
                    total += e;
                }
                for c in 0..dim {
                    y[idx(c)] /= total;
                }
            }
        }
        let y = Tensor::new(x.shape(), y)?;
        let ys = Arc::new(y.clone());
        Ok(self.tape.push_op(
            y,
            &[self],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); g.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |c: usize| (o * dim + c) * inner + i;
                        let dot: T = (0..dim).map(|c| g.data()[idx(c)] * ys.data()[idx(c)]).sum();
                        for c in 0..dim {
                            d[idx(c)] = ys.data()[idx(c)] * (g.data()[idx(c)] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(g.shape(), d).unwrap())]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::nn::{Tape, Tensor};

    #[test]
    fn activation_values() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[2], &[-1.0, 2.0]).unwrap());
        assert_eq!(x.relu().value().data(), &[0.0, 2.0]);
        let z = tape.constant(Tensor::zeros(&[1]));
        assert_eq!(z.sigmoid().item(), 0.5);
        let s = tape.constant(Tensor::zeros(&[1, 2])).softmax(1).unwrap();
        assert_eq!(s.value().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[3, 4, 5], |i| ((i * 7919) % 23) as f64 - 11.0));
        let s = x.softmax(1).unwrap().value();
        for o in 0..3 {
            for i in 0..5 {
                let total: f64 = (0..4).map(|c| s.data()[(o * 4 + c) * 5 + i]).sum();
                assert!((total - 1.0).abs() < 1e-9);
                for c in 0..4 {
                    let v = s.data()[(o * 4 + c) * 5 + i];
                    assert!(v > 0.0 && v < 1.0);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(a.add(b).is_err());
        let m = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(m.matmul(m, false, false).is_err());
        assert!(m.matmul(m, false, true).is_ok());
    }
}
