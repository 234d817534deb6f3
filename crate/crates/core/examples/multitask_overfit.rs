//! Fits the full multitask model (semantic, depth, motion, S3R) to a single
//! batch and prints the loss curve.
//!
//! `cargo run --release --example multitask_overfit -- /tmp/bsn-overfit 200`

use std::path::PathBuf;

use binaural_scene::model::{ModelConfig, TaskSet};
use binaural_scene::pipeline::{make_batch, prepare_split, split_entries, RunConfig, Trainer};
use binaural_scene::rig::{generate_dataset, DatasetConfig, Split};

fn main() -> binaural_scene::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "bsn-overfit".into()));
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let data = root.join("data");
    if !data.join("manifest.txt").exists() {
        generate_dataset(&DatasetConfig { num_scenes: 8, ..DatasetConfig::default() }, &data)?;
    }
    let model = ModelConfig { tasks: "SDMR".parse::<TaskSet>()?, ..ModelConfig::default() };
    let mut cfg = RunConfig::new(model);
    cfg.dataset = data.clone();
    cfg.out = root.join("run");
    cfg.batch_size = 2;
    cfg.adam.lr = 1e-3;

    let mut t = Trainer::new(cfg)?;
    let entries = split_entries(&data, Split::Train)?;
    let clips = prepare_split(&t.cfg, &entries[..2], &t.stats, 1.0)?;
    let batch = make_batch(&clips.iter().collect::<Vec<_>>(), &t.cfg.model, t.cfg.s3r_loss)?;

    let mut first = None;
    for step in 0..steps {
        let r = t.train_step(&batch)?;
        let f = *first.get_or_insert(r.total);
        if step % 20 == 0 || step + 1 == steps {
            println!("step {step:3}  total {:.5}  ratio {:.4}  parts {:?}", r.total, r.total / f, r.parts);
        }
    }
    Ok(())
}
