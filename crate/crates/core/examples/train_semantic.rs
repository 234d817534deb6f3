//! Trains the binaural spectrogram model on semantic labels and reports
//! test mIoU.
//!
//! `cargo run --release --example train_semantic -- /tmp/bsn-train 64 4`
//! (output dir, scenes, epochs). Add a fourth argument `3` for the mono
//! input.

use std::path::PathBuf;
use std::time::Instant;

use binaural_scene::model::ModelConfig;
use binaural_scene::pipeline::{evaluate, train, RunConfig};
use binaural_scene::rig::{generate_dataset, DatasetConfig, Split};

fn main() -> binaural_scene::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "bsn-train".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(64);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let channels: Vec<u8> = args
        .next()
        .map(|s| s.split(',').filter_map(|c| c.parse().ok()).collect())
        .unwrap_or_else(|| vec![3, 8]);

    let data = root.join("data");
    if !data.join("manifest.txt").exists() {
        let t = Instant::now();
        generate_dataset(&DatasetConfig { num_scenes: n, ..DatasetConfig::default() }, &data)?;
        println!("rendered {n} scenes in {:.1}s", t.elapsed().as_secs_f64());
    }

    let mut cfg = RunConfig::new(ModelConfig { input_channels: channels, ..ModelConfig::default() });
    cfg.dataset = data.clone();
    cfg.out = root.join("run");
    cfg.epochs = epochs;
    cfg.adam.lr = 3e-3;
    cfg.batch_size = 8;
    cfg.checkpoint_every_epoch = false;

    let t = Instant::now();
    let trainer = train(cfg, None)?;
    println!("{} steps in {:.1}s", trainer.step, t.elapsed().as_secs_f64());
    let report = evaluate(&trainer, &data, Split::Test, 1.0)?;
    print!("{}", report.to_kv().to_text());
    Ok(())
}
