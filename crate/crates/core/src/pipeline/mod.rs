//! End-to-end runs: preprocessing, training, evaluation, sweeps and S3R
//! inference on audio files.

mod config;
pub mod data;
pub mod eval;
pub mod sweep;
pub mod train;

use std::path::Path;

pub use config::RunConfig;
pub use data::{make_batch, prepare_split, split_entries, Batch, Clip, NormStats};
pub use eval::{evaluate, EvalReport, SampleMetrics};
pub use sweep::{run_sweep, SweepRow, SweepSpec};
pub use train::{forward_losses, train, LossRecord, Trainer};

use crate::dsp::{read_bsna, stft, write_bsna, AudioFile, Waveform, LOG_SPEC_EPS};
use crate::error::{Error, Result};
use crate::model::{mask_from_tensor, s3r_reconstruct, ModelInput, Task};
use crate::nn::{Binding, Tape, Tensor};
use crate::rig::PAIR_CHANNELS;

/// Predicts the model's output pairs for a recording of any length.
///
/// `inputs` are the encoder channels in `input_channels` order. The audio is
/// cut into clip-sized chunks stepping by whole analysis windows; each
/// chunk's reconstruction is kept up to its last full window. Outputs are
/// returned at the input scale, one entry per model output pair.
pub fn s3r_infer(t: &Trainer, inputs: &[Waveform]) -> Result<Vec<crate::model::BinauralPair>> {
    let m = &t.cfg.model;
    if !m.tasks.contains(Task::S3r) {
        return Err(Error::Config("checkpoint has no S3R decoder".into()));
    }
    if inputs.len() != m.input_channels.len() {
        return Err(Error::InvalidInput(format!(
            "model expects {} input channels, got {}",
            m.input_channels.len(),
            inputs.len()
        )));
    }
    if m.encoder.uses_ddsp() {
        return Err(Error::Config("S3R inference on files supports the spectrogram encoder only".into()));
    }
    let len = inputs[0].len();
    if inputs.iter().any(|w| w.len() != len || w.sample_rate != m.sample_rate) {
        return Err(Error::InvalidInput(format!(
            "input channels must share one length and a {} Hz rate",
            m.sample_rate
        )));
    }
    let gain = t.cfg.target_rms / t.stats.mean_rms;
    let (bins, frames) = m.spectrogram_grid();
    let step = data::frame_len(m);
    let (rl, rr) = m.reference_pair();
    let pos = |id: u8| m.input_channels.iter().position(|&c| c == id).expect("reference is an input");
    let pairs = m.s3r_pairs.len();
    let mut out = vec![[vec![0.0; len], vec![0.0; len]]; pairs];
    let mut start = 0;
    while start < len {
        let chunk: Vec<Waveform> = inputs
            .iter()
            .map(|w| {
                let mut s: Vec<f64> = w.samples[start..len.min(start + m.clip_samples)].iter().map(|v| v * gain).collect();
                s.resize(m.clip_samples, 0.0);
                Waveform::new(s, m.sample_rate)
            })
            .collect::<Result<_>>()?;
        let mut spec = Vec::with_capacity(chunk.len() * bins * frames);
        for w in &chunk {
            spec.extend(stft(w, &m.stft)?.data.iter().map(|v| (v.norm() + LOG_SPEC_EPS).ln() as f32));
        }
        let input = ModelInput {
            spec: Some(Tensor::new(&[1, chunk.len(), bins, frames], spec)?),
            ..ModelInput::default()
        };
        let tape = Tape::new();
        let b = Binding::new(&tape, &t.store, false, false);
        let pred = t.net.forward(&b, &input, crate::model::TaskSet::of(&[Task::S3r]))?;
        let mask = pred.mask.expect("S3R requested").value();
        let data: Vec<f64> = mask.data().iter().map(|&v| v as f64).collect();
        let mk = mask_from_tensor(&data, pairs, bins, frames)?;
        let refs = [&chunk[pos(rl)], &chunk[pos(rr)]];
        let specs = [stft(refs[0], &m.stft)?, stft(refs[1], &m.stft)?];
        let rec = s3r_reconstruct(&mk, [&specs[0], &specs[1]], refs)?;
        let keep = step.min(len - start);
        for (o, p) in out.iter_mut().zip(&rec) {
            for (ear, w) in [&p.left, &p.right].into_iter().enumerate() {
                for (dst, &v) in o[ear][start..start + keep].iter_mut().zip(&w.samples) {
                    *dst = v / gain;
                }
            }
        }
        start += step;
    }
    out.into_iter()
        .map(|[l, r]| {
            Ok(crate::model::BinauralPair {
                left: Waveform::new(l, m.sample_rate)?,
                right: Waveform::new(r, m.sample_rate)?,
            })
        })
        .collect()
}

/// Reads `input` (a full rig recording or just the encoder channels),
/// predicts the pairs in `pairs` (all model pairs when empty) and writes one
/// two-channel BSNA per pair into `out_dir`. Returns the written paths.
pub fn s3r_files(
    t: &Trainer,
    input: &Path,
    pairs: &[usize],
    channels: Option<&[u8]>,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    let m = &t.cfg.model;
    if !m.tasks.contains(Task::S3r) {
        return Err(Error::Config("checkpoint has no S3R decoder".into()));
    }
    if let Some(&p) = pairs.iter().find(|p| !m.s3r_pairs.contains(p)) {
        return Err(Error::Config(format!(
            "pair {}-{} is not an output of this model",
            PAIR_CHANNELS[p].0, PAIR_CHANNELS[p].1
        )));
    }
    let audio = read_bsna(input)?;
    let n = audio.channels.len();
    let ids: Vec<u8> = channels.map(<[u8]>::to_vec).unwrap_or_else(|| m.input_channels.clone());
    let waves: Vec<Waveform> = if n == ids.len() && channels.is_none() {
        (0..n).map(|i| audio.waveform(i)).collect()
    } else {
        ids.iter()
            .map(|&id| {
                let i = id as usize;
                if i == 0 || i > n {
                    return Err(Error::InvalidInput(format!("{} has no channel {id}", input.display())));
                }
                Ok(audio.waveform(i - 1))
            })
            .collect::<Result<_>>()?
    };
    let rec = s3r_infer(t, &waves)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (&p, pair) in m.s3r_pairs.iter().zip(&rec) {
        if !pairs.is_empty() && !pairs.contains(&p) {
            continue;
        }
        let (l, r) = PAIR_CHANNELS[p];
        let path = out_dir.join(format!("pair-{l}-{r}.bsna"));
        write_bsna(&path, &AudioFile::from_waveforms(&[pair.left.clone(), pair.right.clone()])?)?;
        written.push(path);
    }
    Ok(written)
}
