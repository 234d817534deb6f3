//! Renders a small synthetic dataset and prints what one scene looks like.
//!
//! `cargo run --release --example render_dataset -- /tmp/bsn-data 16`

use std::path::PathBuf;
use std::time::Instant;

use binaural_scene::rig::{generate_dataset, sample_scene, DatasetConfig, Split};

fn main() -> binaural_scene::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "bsn-data".into()));
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let cfg = DatasetConfig { num_scenes: n, ..DatasetConfig::default() };

    let s = sample_scene(&cfg, 0)?;
    println!("scene 0: {} source(s)", s.scene.sources.len());
    for src in &s.scene.sources {
        println!(
            "  {:<10} az {:+.2} rad  d {:.2} m  omega {:+.2} rad/s",
            src.class, src.azimuth0, src.distance0, src.angular_velocity
        );
    }
    for row in s.maps.labels.rows() {
        let line: String = row.iter().map(|&l| [b'.', b'c', b't', b'm'][l as usize] as char).collect();
        println!("  {line}");
    }

    let t = Instant::now();
    let manifest = generate_dataset(&cfg, &out)?;
    let count = |sp| manifest.iter().filter(|e| e.split == sp).count();
    println!(
        "{} scenes ({} train / {} val / {} test) in {:.1}s -> {}",
        manifest.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        t.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}
