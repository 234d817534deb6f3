use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use binaural_scene::dsp::{read_bsna, write_bsna, AudioFile, Waveform};

fn bsn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsn")).args(args).output().expect("run bsn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
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

fn render(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let cfg = dir.join("render.cfg");
    fs::write(&cfg, format!("num_scenes = {n}\n")).unwrap();
    let out = dir.join(format!("data-{n}-{seed}"));
    let o = bsn(&["render", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", &seed.to_string()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn train_small(dir: &Path, data: &Path, tasks: &str) -> PathBuf {
    let cfg = dir.join(format!("run-{tasks}.cfg"));
    fs::write(
        &cfg,
        format!(
            "dataset = {}\nout = run-{tasks}\ntasks = {tasks}\nepochs = 1\nbatch_size = 2\nmax_train = 2\n",
            data.display()
        ),
    )
    .unwrap();
    let o = bsn(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join(format!("run-{tasks}"))
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bsn(&[])), 1);
    assert_eq!(code(&bsn(&["frobnicate"])), 1);
    assert_eq!(code(&bsn(&["eval"])), 1);
    assert_eq!(code(&bsn(&["--help"])), 0);
}

#[test]
fn empty_render_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("r.cfg");
    fs::write(&cfg, "num_scenes = 0\n").unwrap();
    let o = bsn(&["render", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("empty dataset"), "{}", stderr(&o));
}

#[test]
fn render_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (da, db) = (render(a.path(), 3, 5), render(b.path(), 3, 5));
    let (fa, fb) = (files(&da), files(&db));
    assert!(fa.len() > 3);
    assert_eq!(fa, fb);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "dataset = nowhere\nepochs = 1\n").unwrap();
    assert_eq!(code(&bsn(&["train", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn empty_sweep_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    fs::write(&cfg, "split = test\n").unwrap();
    let o = bsn(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_eval_and_s3r_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = render(dir.path(), 12, 1);

    let sem = train_small(dir.path(), &data, "S");
    let last = sem.join("last");
    assert!(last.join("weights.bsnk").exists());
    let steps = fs::read_to_string(sem.join("steps.tsv")).unwrap();
    assert!(steps.starts_with("epoch\tstep\tsemantic"));

    for amp in ["1", "0"] {
        let out = dir.path().join(format!("eval-{amp}"));
        let o = bsn(&["eval", "--checkpoint", last.to_str().unwrap(), "--amp", amp, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let report = String::from_utf8_lossy(&o.stdout);
        assert!(report.contains("miou"), "{report}");
        assert!(out.join("per_sample.tsv").exists());
    }
    let o = bsn(&["eval", "--checkpoint", last.to_str().unwrap(), "--split", "nope"]);
    assert_ne!(code(&o), 0);

    let input = dir.path().join("rec.bsna");
    let silence: Vec<Waveform> = (0..8).map(|_| Waveform::zeros(20000, 16000)).collect();
    write_bsna(&input, &AudioFile::from_waveforms(&silence).unwrap()).unwrap();
    let o = bsn(&["s3r", "--checkpoint", last.to_str().unwrap(), input.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 1, "a semantic-only model has no S3R decoder");
    assert!(stderr(&o).contains("S3R"));

    let full = train_small(dir.path(), &data, "SDMR").join("last");
    let out = dir.path().join("s3r");
    let o = bsn(&["s3r", "--checkpoint", full.to_str().unwrap(), input.to_str().unwrap(), "--out", out.to_str().unwrap(), "--channels", "3,8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pair = read_bsna(&out.join("pair-1-6.bsna")).unwrap();
    assert_eq!(pair.channels.len(), 2);
    for i in 0..2 {
        let w = pair.waveform(i);
        assert_eq!(w.len(), 20000);
        assert!(w.samples.iter().all(|v| v.abs() < 1e-6));
    }
}
