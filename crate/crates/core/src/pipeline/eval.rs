use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use super::data::{make_batch, prepare_split, reference_specs, split_entries, unit_to_depth, Clip};
use super::train::{forward_losses, write_text, Trainer};
use crate::error::{Error, Result};
use crate::formats::KvMap;
use crate::losses::total_loss;
use crate::metrics::{depth_metrics, epe, miou, s3r_metrics, DepthMetrics, EarMetrics, IouAccumulator};
use crate::model::{mask_from_tensor, s3r_reconstruct, Task};
use crate::nn::{Binding, Tape, Tensor};
use crate::rig::Split;

pub const FOREGROUND: [u8; 3] = [1, 2, 3];

/// Metrics of one clip; tasks the model lacks are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub miou: Option<f64>,
    pub depth: Option<DepthMetrics>,
    pub epe: Option<f64>,
    /// Per output pair, left then right ear.
    pub s3r: Vec<[EarMetrics; 2]>,
    pub loss: f64,
}

/// Dataset-level metrics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub split: Option<Split>,
    pub amp: f64,
    pub count: usize,
    /// Per-class IoU over every pixel of the split.
    pub iou: Vec<(u8, Option<f64>)>,
    pub miou: Option<f64>,
    pub depth: Option<DepthMetrics>,
    pub epe: Option<f64>,
    /// Mean over clips per output pair.
    pub s3r: Vec<[EarMetrics; 2]>,
    pub loss: f64,
    pub samples: Vec<SampleMetrics>,
}

fn argmax_labels(probs: &[f32], classes: usize, h: usize, w: usize) -> Array2<u8> {
    let plane = h * w;
    Array2::from_shape_fn((h, w), |(r, c)| {
        let i = r * w + c;
        let mut best = 0;
        for k in 1..classes {
            if probs[k * plane + i] > probs[best * plane + i] {
                best = k;
            }
        }
        best as u8
    })
}

/// Runs the model over `clips` and scores every enabled task.
pub fn evaluate_clips(t: &Trainer, clips: &[Clip]) -> Result<EvalReport> {
    let cfg = &t.cfg;
    let m = &cfg.model;
    let (h, w) = (m.grid_height, m.grid_width);
    let (bins, frames) = m.spectrogram_grid();
    let mut acc = IouAccumulator::new(&FOREGROUND);
    let mut samples = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(cfg.batch_size) {
        let refs: Vec<&Clip> = chunk.iter().collect();
        let batch = make_batch(&refs, m, cfg.s3r_loss)?;
        let tape = Tape::new();
        let b = Binding::new(&tape, &t.store, false, false);
        let (pred, parts) = forward_losses(&b, &t.net, &batch, cfg)?;
        let loss = total_loss(&parts, &cfg.weights)?.item() as f64;
        let value = |v: Option<crate::nn::Var<'_, f32>>| v.map(|v| v.value());
        let (sem, dep, flow, mask) = (value(pred.semantic), value(pred.depth), value(pred.flow), value(pred.mask));
        for (i, clip) in chunk.iter().enumerate() {
            let gt = &clip.targets;
            fn slice(t: &Tensor<f32>, i: usize, n: usize) -> &[f32] {
                let per = t.numel() / n;
                &t.data()[i * per..(i + 1) * per]
            }
            let slice = |t| slice(t, i, chunk.len());
            let mut s = SampleMetrics {
                id: clip.id.clone(),
                miou: None,
                depth: None,
                epe: None,
                s3r: Vec::new(),
                loss,
            };
            if let Some(p) = &sem {
                let labels = argmax_labels(slice(p), crate::model::NUM_CLASSES, h, w);
                acc.add(&labels, &gt.labels)?;
                s.miou = miou(&labels, &gt.labels, &FOREGROUND)?.1;
            }
            if let Some(p) = &dep {
                let meters = Array2::from_shape_vec((h, w), slice(p).iter().map(|&u| unit_to_depth(u as f64)).collect())
                    .expect("grid size");
                s.depth = Some(depth_metrics(&meters, &gt.depth)?);
            }
            if let Some(p) = &flow {
                let f = Array3::from_shape_vec((2, h, w), slice(p).iter().map(|&v| v as f64).collect())
                    .expect("grid size");
                s.epe = Some(epe(&f, &gt.flow)?);
            }
            if let Some(p) = &mask {
                let data: Vec<f64> = slice(p).iter().map(|&v| v as f64).collect();
                let mk = mask_from_tensor(&data, m.s3r_pairs.len(), bins, frames)?;
                let specs = reference_specs(clip, m)?.expect("S3R clip has reference ears");
                let ref_w = clip.reference.as_ref().expect("reference ears");
                let out = s3r_reconstruct(&mk, [&specs[0], &specs[1]], [&ref_w[0], &ref_w[1]])?;
                for (pair, target) in out.iter().zip(&clip.s3r_targets) {
                    s.s3r.push(s3r_metrics([&pair.left, &pair.right], [&target[0], &target[1]], &m.stft)?);
                }
            }
            samples.push(s);
        }
    }
    let n = samples.len().max(1) as f64;
    let depth = if m.tasks.contains(Task::Depth) {
        let total: usize = samples.iter().filter_map(|s| s.depth.map(|d| d.count)).sum();
        let mut agg = DepthMetrics { count: total, ..DepthMetrics::default() };
        for d in samples.iter().filter_map(|s| s.depth) {
            let wgt = d.count as f64 / total.max(1) as f64;
            agg.abs_rel += wgt * d.abs_rel;
            agg.sq_rel += wgt * d.sq_rel;
            agg.mse += wgt * d.mse;
        }
        agg.rmse = agg.mse.sqrt();
        Some(agg)
    } else {
        None
    };
    let mut s3r = vec![[EarMetrics::default(); 2]; if m.tasks.contains(Task::S3r) { m.s3r_pairs.len() } else { 0 }];
    for s in &samples {
        for (acc_p, p) in s3r.iter_mut().zip(&s.s3r) {
            for ear in 0..2 {
                acc_p[ear].mse += p[ear].mse / n;
                acc_p[ear].env += p[ear].env / n;
            }
        }
    }
    let has_sem = m.tasks.contains(Task::Semantic);
    Ok(EvalReport {
        split: None,
        amp: cfg.amp,
        count: samples.len(),
        iou: if has_sem { acc.per_class() } else { Vec::new() },
        miou: if has_sem { acc.mean() } else { None },
        depth,
        epe: m
            .tasks
            .contains(Task::Motion)
            .then(|| samples.iter().filter_map(|s| s.epe).sum::<f64>() / n),
        s3r,
        loss: samples.iter().map(|s| s.loss).sum::<f64>() / n,
        samples,
    })
}

/// Evaluates a trained model on a split of its dataset with inputs scaled
/// by `amp`.
pub fn evaluate(t: &Trainer, dataset: &Path, split: Split, amp: f64) -> Result<EvalReport> {
    if !(amp.is_finite() && amp >= 0.0) {
        return Err(Error::Config(format!("amp must be finite and >= 0, got {amp}")));
    }
    let mut cfg = t.cfg.clone();
    cfg.dataset = dataset.to_path_buf();
    let entries = split_entries(dataset, split)?;
    let clips = prepare_split(&cfg, &entries, &t.stats, amp)?;
    let mut r = evaluate_clips(t, &clips)?;
    r.split = Some(split);
    r.amp = amp;
    Ok(r)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

impl EvalReport {
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        if let Some(s) = self.split {
            kv.set("split", s);
        }
        kv.set("amp", self.amp);
        kv.set("count", self.count);
        kv.set("loss", format!("{:.6}", self.loss));
        if !self.iou.is_empty() {
            for (c, v) in &self.iou {
                kv.set(&format!("iou_{c}"), opt(*v));
            }
            kv.set("miou", opt(self.miou));
        }
        if let Some(d) = self.depth {
            kv.set("abs_rel", format!("{:.6}", d.abs_rel));
            kv.set("sq_rel", format!("{:.6}", d.sq_rel));
            kv.set("rmse", format!("{:.6}", d.rmse));
            kv.set("mse", format!("{:.6}", d.mse));
        }
        if let Some(e) = self.epe {
            kv.set("epe", format!("{e:.6}"));
        }
        for (p, ears) in self.s3r.iter().enumerate() {
            for (ear, e) in ears.iter().enumerate() {
                kv.set(&format!("s3r{}_mse{}", p, ear + 1), format!("{:.6e}", e.mse));
                kv.set(&format!("s3r{}_env{}", p, ear + 1), format!("{:.6e}", e.env));
            }
        }
        kv
    }

    /// One tab-separated line per clip under a header.
    pub fn per_sample_tsv(&self) -> String {
        let mut s = String::from("id\tloss\tmiou\tabs_rel\trmse\tepe");
        let pairs = self.s3r.len();
        for p in 0..pairs {
            let _ = write!(s, "\ts3r{p}_mse1\ts3r{p}_env1\ts3r{p}_mse2\ts3r{p}_env2");
        }
        s.push('\n');
        for m in &self.samples {
            let _ = write!(
                s,
                "{}\t{:.6}\t{}\t{}\t{}\t{}",
                m.id,
                m.loss,
                opt(m.miou),
                opt(m.depth.map(|d| d.abs_rel)),
                opt(m.depth.map(|d| d.rmse)),
                opt(m.epe)
            );
            for e in &m.s3r {
                let _ = write!(s, "\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}", e[0].mse, e[0].env, e[1].mse, e[1].env);
            }
            s.push('\n');
        }
        s
    }

    /// Writes `metrics.txt` and `per_sample.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join("metrics.txt"), &self.to_kv().to_text())?;
        write_text(&dir.join("per_sample.tsv"), &self.per_sample_tsv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_picks_largest_class() {
        // 4 classes over a 1x2 grid
        let probs = [0.1, 0.7, 0.6, 0.1, 0.2, 0.1, 0.1, 0.1];
        let l = argmax_labels(&probs, 4, 1, 2);
        assert_eq!(l, ndarray::array![[1u8, 0]]);
    }
}
