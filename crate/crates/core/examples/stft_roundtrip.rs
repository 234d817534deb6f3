//! STFT analysis and resynthesis at the model's 512/160 setting, plus a
//! pitch and envelope readout on a test tone.
//!
//! `cargo run --release --example stft_roundtrip`

use std::f64::consts::PI;

use binaural_scene::dsp::{envelope, estimate_f0, istft, stft, StftParams, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> binaural_scene::Result<()> {
    let p = StftParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Waveform::new((0..16000).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16000)?;
    let s = stft(&noise, &p)?;
    println!("1 s of noise -> {} bins x {} frames", s.bins(), s.frames());

    let back = istft(&s)?;
    let interior = p.window_size..s.signal_len() - p.window_size;
    let err: f64 = interior.clone().map(|i| (back.samples[i] - noise.samples[i]).powi(2)).sum();
    let norm: f64 = interior.map(|i| noise.samples[i].powi(2)).sum();
    println!("interior relative L2 error {:.3e}", (err / norm).sqrt());

    let tone = Waveform::new((0..16000).map(|n| 0.5 * (2.0 * PI * 440.0 * n as f64 / 16000.0).sin()).collect(), 16000)?;
    let f0 = estimate_f0(&tone, &p, 40.0, 1000.0)?;
    println!("440 Hz tone: median f0 {:.2} Hz", f0[f0.len() / 2]);
    let env = envelope(&tone);
    println!("amplitude 0.5 tone: envelope at 0.5 s {:.4}", env[8000]);
    Ok(())
}
