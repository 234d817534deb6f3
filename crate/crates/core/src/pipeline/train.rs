use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{fit_stats, make_batch, prepare_split, split_entries, Batch, Clip, NormStats};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{read_pack, write_pack, KvMap, TensorFile};
use crate::losses::{cross_entropy_loss, l2_loss, multiscale_spectral_loss, total_loss, LossParts, S3rLossMode};
use crate::model::{Prediction, SoundNet, Task};
use crate::nn::ops::spectral::istft;
use crate::nn::{Adam, Binding, ParamStore, Tape, Tensor, Var};
use crate::rig::Split;

/// Forward pass plus every enabled loss term for one batch.
pub fn forward_losses<'t>(
    b: &Binding<'t, '_, f32>,
    net: &SoundNet,
    batch: &Batch,
    cfg: &RunConfig,
) -> Result<(Prediction<'t, f32>, LossParts<Var<'t, f32>>)> {
    let tape = b.tape;
    let pred = net.forward(b, &batch.input, cfg.model.tasks)?;
    let mut parts = LossParts::default();
    if let Some(p) = pred.semantic {
        parts.semantic = Some(cross_entropy_loss(p, &batch.labels)?);
    }
    if let Some(p) = pred.depth {
        parts.depth = Some(l2_loss(p, tape.constant(batch.depth.clone()))?);
    }
    if let Some(p) = pred.flow {
        parts.motion = Some(l2_loss(p, tape.constant(batch.flow.clone()))?);
    }
    if let (Some(diff), Some(target)) = (pred.diff_spec, &batch.s3r_target) {
        parts.s3r = Some(match cfg.s3r_loss {
            S3rLossMode::ComplexL2 => l2_loss(diff, tape.constant(target.clone()))?,
            S3rLossMode::Multiscale => {
                let s = diff.shape();
                let rows = s[0] * s[1] * 2;
                let d = istft(diff.reshape(&[rows, 2, s[4], s[5]])?, &cfg.model.stft)?;
                let reference = batch
                    .s3r_reference_wave
                    .clone()
                    .ok_or_else(|| Error::Config("multiscale S3R loss needs reference waveforms".into()))?;
                let est = tape.constant(reference).sub(d)?;
                multiscale_spectral_loss(est, tape.constant(target.clone()), &cfg.weights)?
            }
        });
    }
    Ok((pred, parts))
}

fn part_values(parts: &LossParts<Var<'_, f32>>) -> LossParts<f64> {
    let v = |x: Option<Var<'_, f32>>| x.map(|x| x.item() as f64);
    LossParts {
        semantic: v(parts.semantic),
        depth: v(parts.depth),
        motion: v(parts.motion),
        s3r: v(parts.s3r),
    }
}

/// Loss values of a step or an epoch, in task order with the total last.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossRecord {
    pub parts: [Option<f64>; 4],
    pub total: f64,
}

impl LossRecord {
    fn from_parts(p: &LossParts<f64>, total: f64) -> Self {
        LossRecord {
            parts: [p.semantic, p.depth, p.motion, p.s3r],
            total,
        }
    }

    fn tsv(&self, tasks: crate::model::TaskSet) -> String {
        let mut s = String::new();
        for (t, v) in Task::ALL.iter().zip(self.parts) {
            if tasks.contains(*t) {
                let _ = write!(s, "\t{:.9e}", v.unwrap_or(f64::NAN));
            }
        }
        let _ = write!(s, "\t{:.9e}", self.total);
        s
    }

    fn mean(records: &[LossRecord], weights: &[usize]) -> LossRecord {
        let n: usize = weights.iter().sum();
        let mut out = LossRecord::default();
        for (r, &w) in records.iter().zip(weights) {
            let w = w as f64 / n as f64;
            for (o, v) in out.parts.iter_mut().zip(r.parts) {
                if let Some(v) = v {
                    *o = Some(o.unwrap_or(0.0) + w * v);
                }
            }
            out.total += w * r.total;
        }
        out
    }
}

fn header(tasks: crate::model::TaskSet, lead: &str) -> String {
    let mut s = lead.to_string();
    for t in tasks.iter() {
        s.push('\t');
        s.push_str(t.name());
    }
    s.push_str("\ttotal\n");
    s
}

/// Model, optimizer and bookkeeping of a training run.
pub struct Trainer {
    pub cfg: RunConfig,
    pub net: SoundNet,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub stats: NormStats,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_val: Option<f64>,
}

impl Trainer {
    /// Fresh model; statistics are fitted on the training split.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let train = split_entries(&cfg.dataset, Split::Train)?;
        let dirs: Vec<PathBuf> = train.iter().map(|e| cfg.dataset.join(&e.id)).collect();
        let stats = fit_stats(&dirs, &cfg.model, cfg.target_rms)?;
        Trainer::with_stats(cfg, stats)
    }

    pub fn with_stats(cfg: RunConfig, stats: NormStats) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = SoundNet::new(cfg.model.clone(), &mut store, cfg.seed)?;
        Ok(Trainer {
            adam: Adam::new(cfg.adam)?,
            net,
            store,
            stats,
            epoch: 0,
            step: 0,
            best_val: None,
            cfg,
        })
    }

    /// One optimizer step on `batch`; returns the losses before the update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossRecord> {
        let tape = Tape::new();
        let b = Binding::new(&tape, &self.store, true, true);
        let (_, parts) = forward_losses(&b, &self.net, batch, &self.cfg)?;
        let total = total_loss(&parts, &self.cfg.weights)?;
        let value = total.item() as f64;
        let record = LossRecord::from_parts(&part_values(&parts), value);
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {value} at step {} on batch [{}]",
                self.step + 1,
                batch.ids.join(", ")
            )));
        }
        let grads = tape.backward(total)?;
        let g = b.gradients(&grads);
        if let Some((id, _)) = g.iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient for {} at step {} on batch [{}]",
                self.store.name(*id),
                self.step + 1,
                batch.ids.join(", ")
            )));
        }
        let updates = b.finish();
        self.adam.step(&mut self.store, &g)?;
        for (id, v) in updates {
            self.store.set(id, v)?;
        }
        self.step += 1;
        Ok(record)
    }

    /// Mean losses over `clips` in inference mode.
    pub fn evaluate_loss(&self, clips: &[Clip]) -> Result<LossRecord> {
        let mut records = Vec::new();
        let mut sizes = Vec::new();
        for chunk in clips.chunks(self.cfg.batch_size) {
            let refs: Vec<&Clip> = chunk.iter().collect();
            let batch = make_batch(&refs, &self.cfg.model, self.cfg.s3r_loss)?;
            let tape = Tape::new();
            let b = Binding::new(&tape, &self.store, false, false);
            let (_, parts) = forward_losses(&b, &self.net, &batch, &self.cfg)?;
            let total = total_loss(&parts, &self.cfg.weights)?.item() as f64;
            records.push(LossRecord::from_parts(&part_values(&parts), total));
            sizes.push(chunk.len());
        }
        Ok(LossRecord::mean(&records, &sizes))
    }

    /// Order of training clips in `epoch` (0-based).
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Trains up to `cfg.epochs`, appending to `steps.tsv` and `epochs.tsv`
    /// under `cfg.out` and checkpointing to `last/` after every epoch and
    /// `best/` on a new best validation loss.
    pub fn fit(&mut self) -> Result<()> {
        let cfg = self.cfg.clone();
        fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
        let mut train_entries = split_entries(&cfg.dataset, Split::Train)?;
        if let Some(m) = cfg.max_train {
            train_entries.truncate(m.max(1));
        }
        let train = prepare_split(&cfg, &train_entries, &self.stats, cfg.amp)?;
        let val = match split_entries(&cfg.dataset, Split::Val) {
            Ok(e) => prepare_split(&cfg, &e, &self.stats, cfg.amp)?,
            Err(Error::InvalidInput(_)) => Vec::new(),
            Err(e) => return Err(e),
        };
        let tasks = cfg.model.tasks;
        let steps_path = cfg.out.join("steps.tsv");
        let epochs_path = cfg.out.join("epochs.tsv");
        if self.step == 0 {
            write_text(&steps_path, &header(tasks, "epoch\tstep"))?;
            let mut h = header(tasks, "epoch");
            h.pop();
            for t in tasks.iter() {
                let _ = write!(h, "\tval_{}", t.name());
            }
            h.push_str("\tval_total\n");
            write_text(&epochs_path, &h)?;
        }
        while self.epoch < cfg.epochs {
            let order = self.epoch_order(train.len(), self.epoch);
            let mut records = Vec::new();
            let mut sizes = Vec::new();
            let mut lines = String::new();
            for idx in order.chunks(cfg.batch_size) {
                let clips: Vec<&Clip> = idx.iter().map(|&i| &train[i]).collect();
                let batch = make_batch(&clips, &cfg.model, cfg.s3r_loss)?;
                let r = self.train_step(&batch)?;
                let _ = writeln!(lines, "{}\t{}{}", self.epoch + 1, self.step, r.tsv(tasks));
                records.push(r);
                sizes.push(idx.len());
            }
            append_text(&steps_path, &lines)?;
            let mean = LossRecord::mean(&records, &sizes);
            let val_rec = if val.is_empty() { None } else { Some(self.evaluate_loss(&val)?) };
            self.epoch += 1;
            let val_cols = match &val_rec {
                Some(v) => v.tsv(tasks),
                None => LossRecord { parts: [Some(f64::NAN); 4], total: f64::NAN }.tsv(tasks),
            };
            append_text(&epochs_path, &format!("{}{}{}\n", self.epoch, mean.tsv(tasks), val_cols))?;
            log::info!("epoch {} train {:.5} val {:?}", self.epoch, mean.total, val_rec.map(|v| v.total));
            let score = val_rec.map_or(mean.total, |v| v.total);
            let improved = self.best_val.map_or(true, |b| score < b);
            if improved {
                self.best_val = Some(score);
            }
            self.save(&cfg.out.join("last"))?;
            if improved {
                self.save(&cfg.out.join("best"))?;
            }
            if cfg.checkpoint_every_epoch {
                self.save(&cfg.out.join(format!("epoch-{:03}", self.epoch)))?;
            }
        }
        Ok(())
    }

    /// Writes `run.cfg`, `weights.bsnk` (parameters and Adam moments) and
    /// `state.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join("run.cfg"), &self.cfg.to_kv().to_text())?;
        let tf = |t: &Tensor<f32>| TensorFile::new(t.shape(), t.data().to_vec());
        let mut entries = Vec::new();
        for id in self.store.ids_by_name() {
            entries.push((format!("param/{}", self.store.name(id)), tf(self.store.get(id))?));
        }
        for id in self.store.ids_by_name() {
            if let Some((m, v)) = self.adam.moments(id) {
                entries.push((format!("adam_m/{}", self.store.name(id)), tf(m)?));
                entries.push((format!("adam_v/{}", self.store.name(id)), tf(v)?));
            }
        }
        write_pack(&dir.join("weights.bsnk"), &entries)?;
        let mut st = KvMap::new();
        st.set("epoch", self.epoch);
        st.set("step", self.step);
        st.set("adam_step", self.adam.step);
        if let Some(b) = self.best_val {
            st.set("best_val", format!("{b:e}"));
        }
        self.stats.to_kv(&mut st);
        write_text(&dir.join("state.txt"), &st.to_text())
    }

    /// Restores a run saved by [`Trainer::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let kv = KvMap::load(&dir.join("run.cfg"))?;
        let cfg = RunConfig::from_kv(&kv, Path::new(""))?;
        let st = KvMap::load(&dir.join("state.txt"))?;
        let mut t = Trainer::with_stats(cfg, NormStats::from_kv(&st)?)?;
        t.epoch = st.require("epoch")?;
        t.step = st.require("step")?;
        t.adam.step = st.require("adam_step")?;
        t.best_val = match st.get("best_val") {
            Some(_) => Some(st.require("best_val")?),
            None => None,
        };
        let path = dir.join("weights.bsnk");
        let mut moments: std::collections::BTreeMap<String, (Option<Tensor<f32>>, Option<Tensor<f32>>)> =
            Default::default();
        for (name, tfile) in read_pack(&path)? {
            let tensor = Tensor::new(&tfile.dims, tfile.data)?;
            let (kind, pname) = name
                .split_once('/')
                .ok_or_else(|| Error::format(&path, format!("bad entry name {name:?}")))?;
            let id = t
                .store
                .id(pname)
                .ok_or_else(|| Error::format(&path, format!("unknown parameter {pname:?}")))?;
            match kind {
                "param" => t.store.set(id, tensor)?,
                "adam_m" => moments.entry(pname.to_string()).or_default().0 = Some(tensor),
                "adam_v" => moments.entry(pname.to_string()).or_default().1 = Some(tensor),
                _ => return Err(Error::format(&path, format!("bad entry kind {kind:?}"))),
            }
        }
        for (name, mv) in moments {
            let id = t.store.id(&name).expect("checked above");
            match mv {
                (Some(m), Some(v)) => t.adam.set_moments(id, m, v),
                _ => return Err(Error::format(&path, format!("incomplete Adam moments for {name}"))),
            }
        }
        Ok(t)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn append_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains a run from scratch, or resumes from `resume` when given.
pub fn train(cfg: RunConfig, resume: Option<&Path>) -> Result<Trainer> {
    let mut t = match resume {
        Some(dir) => {
            let mut t = Trainer::load(dir)?;
            t.cfg.epochs = cfg.epochs;
            t.cfg.out = cfg.out;
            t
        }
        None => Trainer::new(cfg)?,
    };
    t.fit()?;
    Ok(t)
}
