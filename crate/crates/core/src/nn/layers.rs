//! Parameterized layers. Each layer registers its tensors in a
//! [`ParamStore`] under a name prefix and runs through a [`Binding`].

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ops::conv::{conv2d, conv_transpose2d, ConvGeometry};
use super::ops::norm::batch_norm;
use super::{concat, Binding, ParamId, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

fn uniform<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let d = Uniform::new_inclusive(-bound, bound);
    Tensor::from_fn(shape, |_| T::of(d.sample(rng)))
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        geometry: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = geometry.kernel;
        let bound = (6.0 / (cin * kh * kw) as f64).sqrt();
        let weight = store.add(&format!("{name}.weight"), uniform(&[cout, cin, kh, kw], bound, rng), true);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[cout]), true));
        Conv2d { weight, bias, geometry }
    }

    pub fn forward<'t, T: Real>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        conv2d(x, b.var(self.weight), self.bias.map(|p| b.var(p)), self.geometry)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geometry: ConvGeometry,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        geometry: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = geometry.kernel;
        let bound = (6.0 / (cout * kh * kw) as f64).sqrt();
        let weight = store.add(&format!("{name}.weight"), uniform(&[cin, cout, kh, kw], bound, rng), true);
        let bias = bias.then(|| store.add(&format!("{name}.bias"), Tensor::zeros(&[cout]), true));
        ConvTranspose2d { weight, bias, geometry }
    }

    pub fn forward<'t, T: Real>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        conv_transpose2d(x, b.var(self.weight), self.bias.map(|p| b.var(p)), self.geometry)
    }
}

/// Batch normalization over axis 1 with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.9;
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.add(&format!("{name}.gamma"), Tensor::ones(&[channels]), true),
            beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(&format!("{name}.running_mean"), Tensor::zeros(&[channels]), false),
            running_var: store.add(&format!("{name}.running_var"), Tensor::ones(&[channels]), false),
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn forward<'t, T: Real>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let store = b.store();
        let rm = store.get(self.running_mean).clone();
        let rv = store.get(self.running_var).clone();
        let (y, stats) = batch_norm(
            x,
            b.var(self.gamma),
            b.var(self.beta),
            rm.data(),
            rv.data(),
            b.training(),
            T::of(self.eps),
        )?;
        if let Some(stats) = stats {
            let mom = T::of(self.momentum);
            let blend = |old: &Tensor<T>, new: &[T]| {
                let data = old
                    .data()
                    .iter()
                    .zip(new)
                    .map(|(&o, &n)| mom * o + (T::one() - mom) * n)
                    .collect();
                Tensor::new(old.shape(), data).unwrap()
            };
            b.record_update(self.running_mean, blend(&rm, &stats.mean));
            b.record_update(self.running_var, blend(&rv, &stats.var));
        }
        Ok(y)
    }
}

/// `y = x W^T + b` for `x (M, in)`, `W (out, in)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / in_features as f64).sqrt();
        Linear {
            weight: store.add(&format!("{name}.weight"), uniform(&[out_features, in_features], bound, rng), true),
            bias: store.add(&format!("{name}.bias"), Tensor::zeros(&[out_features]), true),
            in_features,
            out_features,
        }
    }

    pub fn forward<'t, T: Real>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(b.var(self.weight), false, true)?.add_bias(b.var(self.bias), 1)
    }
}

/// Single-layer GRU with gates ordered (reset, update, candidate):
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    pub weight_ih: ParamId,
    pub weight_hh: ParamId,
    pub bias_ih: ParamId,
    pub bias_hh: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl Gru {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let h3 = 3 * hidden_size;
        Gru {
            weight_ih: store.add(&format!("{name}.weight_ih"), uniform(&[h3, input_size], bound, rng), true),
            weight_hh: store.add(&format!("{name}.weight_hh"), uniform(&[h3, hidden_size], bound, rng), true),
            bias_ih: store.add(&format!("{name}.bias_ih"), Tensor::zeros(&[h3]), true),
            bias_hh: store.add(&format!("{name}.bias_hh"), Tensor::zeros(&[h3]), true),
            input_size,
            hidden_size,
        }
    }

    /// Runs `seq (T, N, D)` from `h0 (N, H)` (zeros when absent). Returns the
    /// output sequence `(T, N, H)` and the final hidden state.
    pub fn forward<'t, T: Real>(
        &self,
        b: &Binding<'t, '_, T>,
        seq: Var<'t, T>,
        h0: Option<Var<'t, T>>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        gru_forward(
            seq,
            h0,
            GruWeights {
                weight_ih: b.var(self.weight_ih),
                weight_hh: b.var(self.weight_hh),
                bias_ih: b.var(self.bias_ih),
                bias_hh: b.var(self.bias_hh),
            },
        )
    }
}

/// Gate parameters of one GRU layer: `weight_ih (3H, D)`, `weight_hh (3H, H)`,
/// biases `(3H)`.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights<'t, T: Real> {
    pub weight_ih: Var<'t, T>,
    pub weight_hh: Var<'t, T>,
    pub bias_ih: Var<'t, T>,
    pub bias_hh: Var<'t, T>,
}

/// GRU recurrence over `seq (T, N, D)`; see [`Gru`].
pub fn gru_forward<'t, T: Real>(
    seq: Var<'t, T>,
    h0: Option<Var<'t, T>>,
    w: GruWeights<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let shape = seq.shape();
    let wi = w.weight_ih.shape();
    let hs = w.weight_hh.shape()[1];
    if shape.len() != 3 || shape[0] == 0 || wi.len() != 2 || wi[1] != shape[2] || wi[0] != 3 * hs {
        return Err(Error::Config(format!(
            "GRU with input weights {wi:?} cannot run on {shape:?}"
        )));
    }
    let (steps, n, d) = (shape[0], shape[1], shape[2]);
    let tape = seq.tape();
    let mut h = match h0 {
        Some(h) if h.shape() == [n, hs] => h,
        Some(h) => {
            return Err(Error::Config(format!(
                "GRU h0 has shape {:?}, expected [{n}, {hs}]",
                h.shape()
            )))
        }
        None => tape.constant(Tensor::zeros(&[n, hs])),
    };
    let gi_all = seq
        .reshape(&[steps * n, d])?
        .matmul(w.weight_ih, false, true)?
        .add_bias(w.bias_ih, 1)?;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let gi = gi_all.narrow(0, t * n, n)?;
        let gh = h.matmul(w.weight_hh, false, true)?.add_bias(w.bias_hh, 1)?;
        let r = gi.narrow(1, 0, hs)?.add(gh.narrow(1, 0, hs)?)?.sigmoid();
        let z = gi.narrow(1, hs, hs)?.add(gh.narrow(1, hs, hs)?)?.sigmoid();
        let cand = gi
            .narrow(1, 2 * hs, hs)?
            .add(r.mul(gh.narrow(1, 2 * hs, hs)?)?)?
            .tanh();
        h = cand.add(z.mul(h.sub(cand)?)?)?;
        outs.push(h);
    }
    let out = concat(&outs, 0)?.reshape(&[steps, n, hs])?;
    Ok((out, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gru_zero_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f64>::new();
        let gru = Gru::new(&mut s, "g", 3, 4, &mut rng);
        let tape = Tape::new();
        let b = Binding::new(&tape, &s, false, false);
        let (out, h) = gru.forward(&b, tape.constant(Tensor::zeros(&[5, 2, 3])), None).unwrap();
        assert_eq!(out.shape(), vec![5, 2, 4]);
        assert!(out.value().data().iter().all(|&v| v == 0.0));
        assert!(h.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_single_step_matches_cell_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = ParamStore::<f64>::new();
        let gru = Gru::new(&mut s, "g", 2, 2, &mut rng);
        s.set(gru.bias_ih, Tensor::from_f64(&[6], &[0.1, -0.2, 0.3, 0.0, 0.5, -0.1]).unwrap()).unwrap();
        let x = [0.4, -0.7];
        let h0 = [0.2, 0.1];
        let tape = Tape::new();
        let b = Binding::new(&tape, &s, false, false);
        let (_, h) = gru
            .forward(
                &b,
                tape.constant(Tensor::from_f64(&[1, 1, 2], &x).unwrap()),
                Some(tape.constant(Tensor::from_f64(&[1, 2], &h0).unwrap())),
            )
            .unwrap();
        let wi = s.get(gru.weight_ih).to_f64_vec();
        let wh = s.get(gru.weight_hh).to_f64_vec();
        let bi = s.get(gru.bias_ih).to_f64_vec();
        let row = |w: &[f64], r: usize, v: &[f64]| w[r * 2] * v[0] + w[r * 2 + 1] * v[1];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for j in 0..2 {
            let r = sig(row(&wi, j, &x) + bi[j] + row(&wh, j, &h0));
            let z = sig(row(&wi, 2 + j, &x) + bi[2 + j] + row(&wh, 2 + j, &h0));
            let n = (row(&wi, 4 + j, &x) + bi[4 + j] + r * row(&wh, 4 + j, &h0)).tanh();
            let expect = (1.0 - z) * n + z * h0[j];
            assert!((h.value().data()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_records_running_update() {
        let mut s = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut s, "bn", 1);
        let tape = Tape::new();
        let b = Binding::new(&tape, &s, true, true);
        let x = tape.constant(Tensor::from_f64(&[2, 1], &[1.0, 3.0]).unwrap());
        bn.forward(&b, x).unwrap();
        let updates = b.finish();
        assert_eq!(updates.len(), 2);
        assert!((updates[0].1.item() - 0.2).abs() < 1e-12);
        assert!((updates[1].1.item() - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::<f32>::new();
        let l = Linear::new(&mut s, "fc", 5, 3, &mut rng);
        let tape = Tape::new();
        let b = Binding::new(&tape, &s, false, false);
        let y = l.forward(&b, tape.constant(Tensor::ones(&[4, 5]))).unwrap();
        assert_eq!(y.shape(), vec![4, 3]);
        assert!(l.forward(&b, tape.constant(Tensor::ones(&[4, 6]))).is_err());
    }
}
