use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use binaural_scene::formats::KvMap;
use binaural_scene::model::parse_pairs;
use binaural_scene::pipeline::{evaluate, run_sweep, s3r_files, train, RunConfig, SweepSpec, Trainer};
use binaural_scene::rig::{generate_dataset, DatasetConfig, Split};
use binaural_scene::{Error, Result};

#[derive(Parser)]
#[command(name = "bsn", version, about = "Binaural scene understanding toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset.
    Render {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model, or resume one with --checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Encoder input channel ids, e.g. `3,8`.
        #[arg(long)]
        channels: Option<String>,
        /// S3R output pairs, e.g. `1-6,4-7`.
        #[arg(long)]
        pairs: Option<String>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 1.0)]
        amp: f64,
        /// Run config whose dataset replaces the checkpoint's.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every cell of a sweep spec.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict binaural pairs for an audio file.
    S3r {
        #[arg(long)]
        checkpoint: PathBuf,
        /// BSNA recording.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        channels: Option<String>,
    },
}

fn channel_list(s: &str) -> Result<Vec<u8>> {
    s.split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| c.parse().map_err(|_| Error::Config(format!("bad channel id {c:?}"))))
        .collect()
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Render { config, out, seed } => {
            let mut cfg = match config {
                Some(p) => DatasetConfig::from_kv(&KvMap::load(&p)?)?,
                None => DatasetConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let entries = generate_dataset(&cfg, &out)?;
            println!("{} samples written to {}", entries.len(), out.display());
        }
        Cmd::Train { config, out, checkpoint, seed, channels, pairs } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = channels {
                cfg.model.input_channels = channel_list(&c)?;
            }
            if let Some(p) = pairs {
                cfg.model.s3r_pairs = parse_pairs(&p)?;
            }
            cfg.validate()?;
            let t = train(cfg, checkpoint.as_deref())?;
            println!("trained {} epochs ({} steps) -> {}", t.epoch, t.step, t.cfg.out.display());
        }
        Cmd::Eval { checkpoint, split, amp, config, out } => {
            let split: Split = split.parse()?;
            let t = Trainer::load(&checkpoint)?;
            let dataset = match config {
                Some(p) => RunConfig::load(&p)?.dataset,
                None => t.cfg.dataset.clone(),
            };
            let report = evaluate(&t, &dataset, split, amp)?;
            let out = out.unwrap_or_else(|| checkpoint.join(format!("eval-{split}")));
            report.write(&out)?;
            print!("{}", report.to_kv().to_text());
        }
        Cmd::Sweep { config, out } => {
            let spec = SweepSpec::load(&config)?;
            let rows = run_sweep(&spec, &out)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!("{} cells, {failed} failed -> {}", rows.len(), out.join("results.tsv").display());
        }
        Cmd::S3r { checkpoint, input, out, pairs, channels } => {
            let t = Trainer::load(&checkpoint)?;
            let pairs = pairs.as_deref().map(parse_pairs).transpose()?.unwrap_or_default();
            let channels = channels.as_deref().map(channel_list).transpose()?;
            for p in s3r_files(&t, &input, &pairs, channels.as_deref(), &out)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bsn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
