//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 1 4`.

#[path = "common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use binaural_scene::distill::{mode_background, soundmaking_mask};
use binaural_scene::dsp::{istft, stft, StftParams, Waveform};
use binaural_scene::losses::{cross_entropy_loss, multiscale_spectral_loss, total_loss_value, LossParts, LossWeights};
use binaural_scene::metrics::{depth_metrics, epe, miou};
use binaural_scene::model::{s3r_reconstruct, ComplexMask, ModelConfig, TaskSet};
use binaural_scene::nn::layers::{gru_forward, GruWeights};
use binaural_scene::nn::{batch_norm, conv2d, conv_transpose2d, ConvGeometry, Tape, Tensor};
use binaural_scene::pipeline::{evaluate, make_batch, prepare_split, split_entries, train, RunConfig, Trainer};
use binaural_scene::rig::{generate_dataset, sample_scene, DatasetConfig, Split, PAIR_CHANNELS};
use common::{gradcheck, random, rng};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64, detail: String) -> Check {
    ensure(elapsed.as_secs() < limit_s, format!("{detail}; {:.0}s of {limit_s}s", elapsed.as_secs_f64()))
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
    Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), 16000).unwrap()
}

fn c1_dsp() -> Check {
    let t = Instant::now();
    let p = StftParams::default();
    let mut r = rng(100);
    let (mut round, mut lin, mut pars) = (0.0f64, 0.0f64, 0.0f64);
    let window = p.window.coefficients(p.window_size);
    for _ in 0..100 {
        let w = noise(&mut r, 16000);
        let s = stft(&w, &p).map_err(|e| e.to_string())?;
        let back = istft(&s).map_err(|e| e.to_string())?;
        let interior = p.window_size..s.signal_len() - p.window_size;
        let e: f64 = interior.clone().map(|i| (back.samples[i] - w.samples[i]).powi(2)).sum();
        let n: f64 = interior.map(|i| w.samples[i].powi(2)).sum();
        round = round.max((e / n).sqrt());

        let v = noise(&mut r, 16000);
        let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        let mix = Waveform::new(w.samples.iter().zip(&v.samples).map(|(x, y)| a * x + b * y).collect(), 16000).unwrap();
        let (sm, sv) = (stft(&mix, &p).unwrap(), stft(&v, &p).unwrap());
        let (mut num, mut den) = (0.0, 0.0);
        for ((m, x), y) in sm.data.iter().zip(s.data.iter()).zip(sv.data.iter()) {
            num += (m - (x * a + y * b)).norm_sqr();
            den += m.norm_sqr();
        }
        lin = lin.max((num / den).sqrt());

        // one-sided bins back to full-spectrum energy
        let nfft = p.window_size;
        for f in 0..s.frames() {
            let start = f * p.hop_length;
            let time: f64 = (0..nfft).map(|i| (w.samples[start + i] * window[i]).powi(2)).sum();
            let mut freq = 0.0;
            for k in 0..s.bins() {
                let e = s.data[[k, f]].norm_sqr();
                freq += if k == 0 || k == nfft / 2 { e } else { 2.0 * e };
            }
            freq /= nfft as f64;
            pars = pars.max((freq - time).abs() / time);
        }
    }
    let detail = format!("round-trip {round:.2e} (<1e-5), linearity {lin:.2e} (<1e-9), Parseval {pars:.2e} (<1e-6)");
    ensure(round < 1e-5 && lin < 1e-9 && pars < 1e-6, detail.clone())?;
    within(t.elapsed(), 60, detail)
}

fn c2_autodiff() -> Check {
    let t = Instant::now();
    let mut r = rng(200);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    let eps = 1e-5;
    let mut adjoint: f64 = 0.0;
    for trial in 0..4u64 {
        let n = r.gen_range(1..3);
        let (ci, co) = (r.gen_range(1..4), r.gen_range(1..4));
        let (h, w) = (r.gen_range(4..8), r.gen_range(4..8));
        let k = r.gen_range(1..4);
        let g = ConvGeometry::new(k, r.gen_range(1..3), r.gen_range(0..2), r.gen_range(1..3));
        if g.conv_output(h, w).is_some() {
            let inputs = [random(&[n, ci, h, w], &mut r), random(&[co, ci, k, k], &mut r), random(&[co], &mut r)];
            note("conv2d", gradcheck(&inputs, eps, trial, |_, v| conv2d(v[0], v[1], Some(v[2]), g).unwrap()));
        }
        let gt = ConvGeometry::new(4, 2, 1, 1);
        let inputs = [random(&[n, ci, h / 2, w / 2], &mut r), random(&[ci, co, 4, 4], &mut r), random(&[co], &mut r)];
        note("conv_transpose2d", gradcheck(&inputs, eps, trial, |_, v| conv_transpose2d(v[0], v[1], Some(v[2]), gt).unwrap()));

        let c = r.gen_range(1..4);
        let inputs = [random(&[r.gen_range(2..4), c, 2, 3], &mut r), random(&[c], &mut r), random(&[c], &mut r)];
        let (mean, var): (Vec<f64>, Vec<f64>) = (0..c).map(|_| (r.gen_range(-0.5..0.5), r.gen_range(0.5..2.0))).unzip();
        for training in [true, false] {
            note(
                "batch_norm",
                gradcheck(&inputs, eps, trial, |_, v| batch_norm(v[0], v[1], v[2], &mean, &var, training, 1e-5).unwrap().0),
            );
        }

        let x = [random(&[r.gen_range(1..4), r.gen_range(2..5)], &mut r)];
        note("relu", gradcheck(&x, eps, trial, |_, v| v[0].relu()));
        note("sigmoid", gradcheck(&x, eps, trial, |_, v| v[0].sigmoid()));
        note("softmax", gradcheck(&x, eps, trial, |_, v| v[0].softmax(1).unwrap()));

        let (b, d, o) = (r.gen_range(1..4), r.gen_range(1..5), r.gen_range(1..5));
        let inputs = [random(&[b, d], &mut r), random(&[o, d], &mut r), random(&[o], &mut r)];
        note(
            "linear",
            gradcheck(&inputs, eps, trial, |_, v| v[0].matmul(v[1], false, true).unwrap().add_bias(v[2], 1).unwrap()),
        );

        let (steps, d, hu) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        let inputs = [
            random(&[steps, b, d], &mut r),
            random(&[b, hu], &mut r),
            random(&[3 * hu, d], &mut r),
            random(&[3 * hu, hu], &mut r),
            random(&[3 * hu], &mut r),
            random(&[3 * hu], &mut r),
        ];
        note(
            "gru",
            gradcheck(&inputs, eps, trial, |_, v| {
                let w = GruWeights { weight_ih: v[2], weight_hh: v[3], bias_ih: v[4], bias_hh: v[5] };
                gru_forward(v[0], Some(v[1]), w).unwrap().0
            }),
        );

        for g in [ConvGeometry::new(3, 2, 1, 1), ConvGeometry::new(4, 2, 1, 1), ConvGeometry::new(3, 1, 2, 2)] {
            let (h, w) = (r.gen_range(5..10), r.gen_range(5..10));
            let Some((oh, ow)) = g.conv_output(h, w) else { continue };
            if g.transpose_output(oh, ow) != Some((h, w)) {
                continue;
            }
            let x = random(&[2, 3, h, w], &mut r);
            let y = random(&[2, 2, oh, ow], &mut r);
            let k = random(&[2, 3, g.kernel.0, g.kernel.1], &mut r);
            let tape = Tape::new();
            let cx = conv2d(tape.constant(x.clone()), tape.constant(k.clone()), None, g).unwrap().value();
            let ty = conv_transpose2d(tape.constant(y.clone()), tape.constant(k), None, g).unwrap().value();
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
            adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
    }
    let max = worst.values().fold(0.0f64, |a, &b| a.max(b));
    let detail = format!(
        "{} layers, worst {max:.2e} (<1e-3), adjoint {adjoint:.2e} (<1e-9)",
        worst.len()
    );
    ensure(max < 1e-3 && adjoint < 1e-9 && worst.len() == 8, detail.clone())?;
    within(t.elapsed(), 300, detail)
}

fn c3_oracles() -> Check {
    let mut r = rng(300);
    for i in 0..1000 {
        let (h, w, len) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..12));
        let values = r.gen_range(1..6u8);
        let frames: Vec<Array2<u8>> = (0..len).map(|_| Array2::from_shape_fn((h, w), |_| r.gen_range(0..values))).collect();
        let got = mode_background(&frames).map_err(|e| e.to_string())?;
        let want = Array2::from_shape_fn((h, w), |idx| {
            let mut hist = [0usize; 256];
            for f in &frames {
                hist[f[idx] as usize] += 1;
            }
            let top = *hist.iter().max().unwrap();
            hist.iter().position(|&c| c == top).unwrap() as u8
        });
        if got != want {
            return Err(format!("mode_background differs on sequence {i}"));
        }
    }
    let classes = [1u8, 2, 3];
    for i in 0..1000 {
        let (h, w) = (r.gen_range(1..9), r.gen_range(1..9));
        let pred = Array2::from_shape_fn((h, w), |_| r.gen_range(0..4u8));
        let gt = Array2::from_shape_fn((h, w), |_| r.gen_range(0..4u8));
        let mut cm = [[0u64; 4]; 4];
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            cm[g as usize][p as usize] += 1;
        }
        let ious: Vec<f64> = classes
            .iter()
            .filter_map(|&c| {
                let c = c as usize;
                let tp = cm[c][c];
                let fp: u64 = (0..4).map(|g| cm[g][c]).sum::<u64>() - tp;
                let fneg: u64 = cm[c].iter().sum::<u64>() - tp;
                let u = tp + fp + fneg;
                (u > 0).then(|| tp as f64 / u as f64)
            })
            .collect();
        let want = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
        let got = miou(&pred, &gt, &classes).map_err(|e| e.to_string())?.1;
        if got != want {
            return Err(format!("miou differs on grid {i}: {got:?} vs {want:?}"));
        }
    }
    for i in 0..1000 {
        let (h, w) = (r.gen_range(1..6), r.gen_range(1..6));
        let yt = Array2::from_shape_fn((h, w), |_| r.gen_range(0..5u8));
        let bg = Array2::from_shape_fn((h, w), |_| r.gen_range(0..5u8));
        let got = soundmaking_mask(&yt, &bg, &classes).map_err(|e| e.to_string())?;
        let sets: Vec<std::collections::HashSet<(usize, usize)>> = (0..5u8)
            .map(|c| yt.indexed_iter().filter(|(_, &v)| v == c).map(|(p, _)| p).collect())
            .collect();
        let same: std::collections::HashSet<_> = yt.indexed_iter().filter(|(p, &v)| bg[*p] == v).map(|(p, _)| p).collect();
        let mut want = Array2::<u8>::zeros((h, w));
        for &c in &classes {
            for p in sets[c as usize].difference(&same) {
                want[*p] = 1;
            }
        }
        if got != want {
            return Err(format!("soundmaking_mask differs on grid {i}"));
        }
    }
    Ok("mode_background, miou, soundmaking_mask exact on 1000 cases each".into())
}

fn c4_hand_cases() -> Check {
    let tape = Tape::<f64>::new();
    let uniform = tape.constant(Tensor::full(&[1, 4, 2, 2], 0.25));
    let ce = cross_entropy_loss(uniform, &[0, 1, 2, 3]).map_err(|e| e.to_string())?.item();
    let pred = Array3::zeros((2, 1, 1));
    let gt = Array3::from_shape_vec((2, 1, 1), vec![3.0, 4.0]).unwrap();
    let e = epe(&pred, &gt).map_err(|e| e.to_string())?;
    let d = depth_metrics(&ndarray::array![[1.0]], &ndarray::array![[2.0]]).map_err(|e| e.to_string())?;
    let unit = LossParts { semantic: Some(1.0), depth: Some(1.0), motion: Some(1.0), s3r: Some(1.0) };
    let total = total_loss_value(&unit, &LossWeights::default());
    let mut r = rng(400);
    let wave = tape.constant(Tensor::from_fn(&[2, 2048], |_| r.gen_range(-1.0..1.0)));
    let ms = multiscale_spectral_loss(wave, wave, &LossWeights::default()).map_err(|e| e.to_string())?.item();
    let depth_ok = [(d.abs_rel, 0.5), (d.sq_rel, 0.5), (d.rmse, 1.0), (d.mse, 1.0)].iter().all(|(a, b)| (a - b).abs() <= 1e-12);
    let detail = format!(
        "CE {ce:.12} vs ln4, EPE {e}, depth {:?}, total {total}, spectral {ms}",
        (d.abs_rel, d.sq_rel, d.rmse, d.mse)
    );
    ensure(
        (ce - 4f64.ln()).abs() <= 1e-9 && (e - 5.0).abs() <= 1e-12 && depth_ok && total == 1.6 && ms == 0.0,
        detail,
    )
}

fn c5_s3r() -> Check {
    let p = StftParams::default();
    let cfg = DatasetConfig::default();
    let (mut zero, mut oracle) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let s = sample_scene(&cfg, i).map_err(|e| e.to_string())?;
        let ch = |id: u8| &s.audio[id as usize - 1];
        let (rl, rr) = PAIR_CHANNELS[0];
        let refs = [ch(rl), ch(rr)];
        let rs = [stft(refs[0], &p).unwrap(), stft(refs[1], &p).unwrap()];
        let targets: Vec<[&Waveform; 2]> = PAIR_CHANNELS[1..].iter().map(|&(l, r)| [ch(l), ch(r)]).collect();
        let ts: Vec<[_; 2]> = targets.iter().map(|t| [stft(t[0], &p).unwrap(), stft(t[1], &p).unwrap()]).collect();
        let views: Vec<_> = ts.iter().map(|t| [&t[0], &t[1]]).collect();

        let zm = ComplexMask::zeros(3, rs[0].bins(), rs[0].frames());
        for pair in s3r_reconstruct(&zm, [&rs[0], &rs[1]], refs).map_err(|e| e.to_string())? {
            for (out, want) in [(&pair.left, refs[0]), (&pair.right, refs[1])] {
                for (a, b) in out.samples.iter().zip(&want.samples) {
                    zero = zero.max((a - b).abs());
                }
            }
        }

        let om = ComplexMask::oracle([&rs[0], &rs[1]], &views).map_err(|e| e.to_string())?;
        let interior = p.window_size..rs[0].signal_len() - p.window_size;
        let out = s3r_reconstruct(&om, [&rs[0], &rs[1]], refs).map_err(|e| e.to_string())?;
        for (pair, t) in out.iter().zip(&targets) {
            for (a, b) in [(&pair.left, t[0]), (&pair.right, t[1])] {
                let e: f64 = interior.clone().map(|i| (a.samples[i] - b.samples[i]).powi(2)).sum();
                let n: f64 = interior.clone().map(|i| b.samples[i].powi(2)).sum();
                oracle = oracle.max((e / n).sqrt());
            }
        }
    }
    ensure(
        zero <= 1e-6 && oracle < 1e-4,
        format!("20 scenes: zero mask max error {zero:.2e} (<=1e-6), oracle mask rel L2 {oracle:.2e} (<1e-4)"),
    )
}

fn c6_overfit(root: &Path) -> Check {
    let t = Instant::now();
    let data = root.join("overfit-data");
    generate_dataset(&DatasetConfig { num_scenes: 8, ..DatasetConfig::default() }, &data).map_err(|e| e.to_string())?;
    let model = ModelConfig { tasks: TaskSet::ALL, ..ModelConfig::default() };
    let mut cfg = RunConfig::new(model);
    cfg.dataset = data.clone();
    cfg.out = root.join("overfit-run");
    cfg.batch_size = 2;
    cfg.adam.lr = 1e-3;
    let mut tr = Trainer::new(cfg).map_err(|e| e.to_string())?;
    let entries = split_entries(&data, Split::Train).map_err(|e| e.to_string())?;
    let clips = prepare_split(&tr.cfg, &entries[..2], &tr.stats, 1.0).map_err(|e| e.to_string())?;
    let batch = make_batch(&clips.iter().collect::<Vec<_>>(), &tr.cfg.model, tr.cfg.s3r_loss).map_err(|e| e.to_string())?;
    let mut first = None;
    let mut ratio = f64::INFINITY;
    let mut steps = 0;
    while steps < 200 && ratio >= 0.1 {
        let r = tr.train_step(&batch).map_err(|e| e.to_string())?;
        ratio = r.total / *first.get_or_insert(r.total);
        steps += 1;
    }
    let detail = format!("loss ratio {ratio:.4} after {steps} steps (<0.1 within 200)");
    ensure(ratio < 0.1, detail.clone())?;
    within(t.elapsed(), 600, detail)
}

const SCENES: usize = 512;
const SEEDS: [u64; 3] = [0, 1, 2];

/// The desk-scale training recipe shared by the comparisons.
fn recipe(data: &Path, out: PathBuf, tasks: TaskSet, channels: &[u8], seed: u64) -> RunConfig {
    let model = ModelConfig { input_channels: channels.to_vec(), tasks, ..ModelConfig::default() };
    let mut cfg = RunConfig::new(model);
    cfg.dataset = data.to_path_buf();
    cfg.out = out;
    cfg.seed = seed;
    cfg.epochs = 15;
    cfg.batch_size = 8;
    cfg.adam.lr = 3e-3;
    cfg.checkpoint_every_epoch = false;
    cfg
}

fn test_miou(cfg: RunConfig) -> std::result::Result<f64, String> {
    let data = cfg.dataset.clone();
    let t = train(cfg, None).map_err(|e| e.to_string())?;
    let r = evaluate(&t, &data, Split::Test, 1.0).map_err(|e| e.to_string())?;
    Ok(r.miou.unwrap_or(0.0))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct(v: &[f64]) -> String {
    v.iter().map(|x| format!("{:.2}", 100.0 * x)).collect::<Vec<_>>().join("/")
}

fn c7_binaural(data: &Path, root: &Path, binaural: &mut Vec<f64>) -> Check {
    let t = Instant::now();
    let mut mono = Vec::new();
    for s in SEEDS {
        binaural.push(test_miou(recipe(data, root.join(format!("s-38-{s}")), TaskSet::SEMANTIC, &[3, 8], s))?);
        mono.push(test_miou(recipe(data, root.join(format!("s-3-{s}")), TaskSet::SEMANTIC, &[3], s))?);
    }
    let gap = 100.0 * (mean(binaural) - mean(&mono));
    let detail = format!("binaural {} vs mono {} mIoU %, gap {gap:.2} points (>=5)", pct(binaural), pct(&mono));
    ensure(gap >= 5.0, detail.clone())?;
    within(t.elapsed(), 3600, detail)
}

fn c8_multitask(data: &Path, root: &Path, single: &[f64]) -> Check {
    let mut joint = Vec::new();
    for s in SEEDS {
        joint.push(test_miou(recipe(data, root.join(format!("sdmr-38-{s}")), TaskSet::ALL, &[3, 8], s))?);
    }
    let diff = 100.0 * (mean(&joint) - mean(single));
    ensure(
        diff >= -1.0,
        format!("joint SDM+R {} vs semantic-only {} mIoU %, difference {diff:+.2} points (>=-1)", pct(&joint), pct(single)),
    )
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn c9_determinism(data: &Path, root: &Path) -> Check {
    let out = root.join("determinism");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(&out);
        let mut cfg = recipe(data, out.clone(), TaskSet::ALL, &[3, 8], 7);
        cfg.epochs = 2;
        cfg.max_train = Some(16);
        cfg.checkpoint_every_epoch = true;
        train(cfg, None).map_err(|e| e.to_string())?;
        runs.push(tree(&out));
    }
    let differing: Vec<String> = runs[0]
        .iter()
        .filter(|(k, v)| runs[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    ensure(
        differing.is_empty() && runs[0].len() == runs[1].len() && runs[0].keys().any(|k| k.ends_with("steps.tsv")),
        format!("{} files compared, differing: {:?}", runs[0].len(), differing),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();
    let data = root.join("data");

    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Check| {
        if !run(n) {
            return;
        }
        let t = Instant::now();
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match res {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} {tag} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
    };

    report(1, "dsp", &mut c1_dsp);
    report(2, "autodiff", &mut c2_autodiff);
    report(3, "oracles", &mut c3_oracles);
    report(4, "hand cases", &mut c4_hand_cases);
    report(5, "s3r consistency", &mut c5_s3r);
    report(6, "overfit", &mut || c6_overfit(&root));
    if run(7) || run(8) || run(9) {
        let t = Instant::now();
        generate_dataset(&DatasetConfig { num_scenes: SCENES, ..DatasetConfig::default() }, &data)
            .expect("render the comparison dataset");
        println!("rendered {SCENES} scenes in {:.0}s", t.elapsed().as_secs_f64());
    }
    report(9, "determinism", &mut || c9_determinism(&data, &root));
    let mut binaural = Vec::new();
    report(7, "binaural beats mono", &mut || c7_binaural(&data, &root, &mut binaural));
    report(8, "multitask keeps semantics", &mut || {
        if binaural.len() < SEEDS.len() {
            for s in SEEDS {
                binaural.push(test_miou(recipe(&data, root.join(format!("s-38-{s}")), TaskSet::SEMANTIC, &[3, 8], s))?);
            }
        }
        c8_multitask(&data, &root, &binaural)
    });
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
