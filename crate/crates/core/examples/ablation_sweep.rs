//! A small input-channel ablation run through the sweep driver: mono,
//! binaural and two-pair inputs, each trained briefly and scored on the
//! test split.
//!
//! `cargo run --release --example ablation_sweep -- /tmp/bsn-sweep 48 2`

use std::path::PathBuf;

use binaural_scene::model::ModelConfig;
use binaural_scene::pipeline::{run_sweep, RunConfig, SweepSpec};
use binaural_scene::rig::{generate_dataset, DatasetConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "bsn-sweep".into()));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(48);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let data = root.join("data");
    if !data.join("manifest.txt").exists() {
        generate_dataset(&DatasetConfig { num_scenes: n, ..DatasetConfig::default() }, &data)?;
    }
    let mut base = RunConfig::new(ModelConfig::default());
    base.dataset = data;
    base.epochs = epochs;
    base.batch_size = 8;
    base.adam.lr = 3e-3;
    base.checkpoint_every_epoch = false;

    std::fs::write(root.join("run.cfg"), base.to_kv().to_text())?;
    let sweep = root.join("sweep.cfg");
    std::fs::write(&sweep, "base = run.cfg\nsplit = test\ninput_channels = 3 | 3,8 | 3,8,1,6\n")?;
    let spec = SweepSpec::load(&sweep)?;
    let rows = run_sweep(&spec, &root.join("sweep"))?;
    for r in rows {
        match r.outcome {
            Ok(rep) => println!("{:?}: miou {:.4}", r.cell, rep.miou.unwrap_or(f64::NAN)),
            Err(e) => println!("{:?}: failed: {e}", r.cell),
        }
    }
    Ok(())
}
