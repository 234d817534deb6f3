#![allow(dead_code)]

use binaural_scene::nn::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Worst relative error between reverse-mode gradients of `f` and central
/// differences, over every element of every input.
///
/// The scalar under test is `sum(f(inputs) * r)` for a fixed random `r`, so
/// every output element contributes with a distinct weight. Errors are scaled
/// by the largest finite-difference magnitude of the same input.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], eps: f64, seed: u64, f: F) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let probe = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).shape()
    };
    let weights = random(&probe, &mut rng(seed));
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = f(&tape, &vars);
        y.value().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = f(&tape, &vars);
    let w = tape.constant(weights.clone());
    let loss = y.mul(w).unwrap().sum();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).unwrap().to_f64_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            *n = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / scale);
        }
    }
    worst
}
