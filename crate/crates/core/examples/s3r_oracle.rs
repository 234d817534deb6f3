//! Spatial sound super-resolution with an oracle complex mask: the rig's
//! 0° ear pair is turned into each other pair's signals through the
//! difference-spectrogram reconstruction.
//!
//! `cargo run --release --example s3r_oracle`

use binaural_scene::dsp::{stft, StftParams, Waveform};
use binaural_scene::metrics::s3r_metrics;
use binaural_scene::model::{s3r_reconstruct, ComplexMask};
use binaural_scene::rig::{sample_scene, DatasetConfig, PAIR_CHANNELS};

fn main() -> binaural_scene::Result<()> {
    let p = StftParams::default();
    let s = sample_scene(&DatasetConfig::default(), 0)?;
    let ch = |id: u8| &s.audio[id as usize - 1];
    let (rl, rr) = PAIR_CHANNELS[0];
    let refs = [ch(rl), ch(rr)];
    let ref_specs = [stft(refs[0], &p)?, stft(refs[1], &p)?];
    let targets: Vec<[&Waveform; 2]> = PAIR_CHANNELS[1..].iter().map(|&(l, r)| [ch(l), ch(r)]).collect();
    let target_specs: Vec<_> = targets.iter().map(|t| Ok([stft(t[0], &p)?, stft(t[1], &p)?])).collect::<binaural_scene::Result<_>>()?;
    let views: Vec<_> = target_specs.iter().map(|t| [&t[0], &t[1]]).collect();

    for (name, mask) in [
        ("zero mask", ComplexMask::zeros(targets.len(), ref_specs[0].bins(), ref_specs[0].frames())),
        ("oracle mask", ComplexMask::oracle([&ref_specs[0], &ref_specs[1]], &views)?),
    ] {
        let out = s3r_reconstruct(&mask, [&ref_specs[0], &ref_specs[1]], refs)?;
        println!("{name}");
        for ((pair, t), &(l, r)) in out.iter().zip(&targets).zip(&PAIR_CHANNELS[1..]) {
            let m = s3r_metrics([&pair.left, &pair.right], *t, &p)?;
            println!("  pair {l}-{r}: mse {:.3e} / {:.3e}  env {:.3e} / {:.3e}", m[0].mse, m[1].mse, m[0].env, m[1].env);
        }
    }
    Ok(())
}
