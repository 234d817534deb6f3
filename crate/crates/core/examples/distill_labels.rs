//! Turns a sequence of panoramic label frames into a distillation target:
//! mode background, sound-making mask and the masked labels.
//!
//! `cargo run --release --example distill_labels`

use binaural_scene::distill::{diff_fraction, masked_labels, soundmaking_mask};
use binaural_scene::rig::{label_frame, sample_scene, DatasetConfig};

fn show(title: &str, g: &ndarray::Array2<u8>) {
    println!("{title}");
    for row in g.rows() {
        let line: String = row.iter().map(|&l| [b'.', b'c', b't', b'm', b'#'][l.min(4) as usize] as char).collect();
        println!("  {line}");
    }
}

fn main() -> binaural_scene::Result<()> {
    let cfg = DatasetConfig { num_scenes: 1, ..DatasetConfig::default() };
    let scene = sample_scene(&cfg, 3)?.scene;
    let bg = cfg.background_labels(&scene)?;
    let now = label_frame(&scene, cfg.t_mid(), &cfg.raster);
    let mask = soundmaking_mask(&now, &bg, &[1, 2, 3])?;
    show("labels at clip centre", &now);
    show("mode background", &bg);
    show("sound-making labels", &masked_labels(&now, &mask));
    println!("{:.1}% of pixels differ from the background", 100.0 * diff_fraction(&now, &bg));
    Ok(())
}
