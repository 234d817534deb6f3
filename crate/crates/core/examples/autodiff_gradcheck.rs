//! Reverse-mode gradients of a small conv / batch-norm / softmax network
//! against central differences, in f64.
//!
//! `cargo run --release --example autodiff_gradcheck`

use binaural_scene::nn::{batch_norm, conv2d, cross_entropy, ConvGeometry, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(x: &Tensor<f64>, k: &Tensor<f64>, grad: bool) -> (f64, Option<Vec<f64>>) {
    let tape = Tape::new();
    let g = ConvGeometry::new(3, 1, 1, 1);
    let kv = if grad { tape.leaf(k.clone()) } else { tape.constant(k.clone()) };
    let h = conv2d(tape.constant(x.clone()), kv, None, g).unwrap();
    let gamma = tape.constant(Tensor::ones(&[4]));
    let beta = tape.constant(Tensor::zeros(&[4]));
    let (h, _) = batch_norm(h, gamma, beta, &[0.0; 4], &[1.0; 4], true, 1e-5).unwrap();
    let p = h.relu().softmax(1).unwrap();
    let labels: Vec<usize> = (0..2 * 5 * 6).map(|i| i % 4).collect();
    let l = cross_entropy(p, &labels).unwrap();
    let grads = grad.then(|| tape.backward(l).unwrap().get(kv).unwrap().to_f64_vec());
    (l.item(), grads)
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[2, 2, 5, 6], |_| rng.gen_range(-1.0..1.0));
    let k = Tensor::from_fn(&[4, 2, 3, 3], |_| rng.gen_range(-0.5..0.5));
    let (l0, analytic) = loss(&x, &k, true);
    let analytic = analytic.unwrap();
    println!("loss {l0:.6}");
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..k.numel() {
        let mut kp = k.clone();
        kp.data_mut()[i] += eps;
        let mut km = k.clone();
        km.data_mut()[i] -= eps;
        let fd = (loss(&x, &kp, false).0 - loss(&x, &km, false).0) / (2.0 * eps);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
        worst = worst.max(rel);
        if i < 4 {
            println!("  w[{i}]  tape {:+.8}  central {:+.8}", analytic[i], fd);
        }
    }
    println!("worst relative error over {} weights: {worst:.2e}", k.numel());
}
