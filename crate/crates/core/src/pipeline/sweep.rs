use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::eval::{evaluate, EvalReport};
use super::train::{train, write_text};
use super::RunConfig;
use crate::error::{Error, Result};
use crate::formats::KvMap;
use crate::rig::Split;

/// A base run config plus axes, each a run key with `|`-separated values.
///
/// ```text
/// base = run.cfg
/// split = test
/// input_channels = 3 | 3,8 | 1,6,3,8
/// seed = 0 | 1 | 2
/// ```
///
/// `parallel = true` trains the cells concurrently on the rayon pool.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: KvMap,
    /// Directory relative paths in `base` are resolved against.
    pub base_dir: std::path::PathBuf,
    pub split: Split,
    pub parallel: bool,
    pub axes: Vec<(String, Vec<String>)>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let kv = KvMap::load(path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let (base, base_dir) = match kv.get("base") {
            Some(b) => {
                let p = dir.join(b);
                (KvMap::load(&p)?, p.parent().unwrap_or(Path::new(".")).to_path_buf())
            }
            None => (KvMap::new(), dir),
        };
        let split = kv.parse_or("split", Split::Test)?;
        let parallel = kv.parse_or("parallel", false)?;
        let axes = kv
            .keys()
            .filter(|k| !matches!(*k, "base" | "split" | "parallel"))
            .map(|k| {
                let vals: Vec<String> = kv.get(k).unwrap_or("").split('|').map(|v| v.trim().to_string()).collect();
                (k.to_string(), vals)
            })
            .collect();
        let spec = SweepSpec { base, base_dir, split, parallel, axes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Config("sweep spec has no axes".into()));
        }
        if let Some((k, _)) = self.axes.iter().find(|(_, v)| v.iter().all(String::is_empty)) {
            return Err(Error::Config(format!("sweep axis {k} has no values")));
        }
        Ok(())
    }

    /// Every combination of axis values, axes in key order with the first
    /// varying slowest.
    pub fn cells(&self) -> Vec<Vec<(String, String)>> {
        let mut cells = vec![Vec::new()];
        for (k, vals) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    vals.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((k.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

/// Result of one cell; `Err` holds the failure message.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub cell: Vec<(String, String)>,
    pub outcome: std::result::Result<EvalReport, String>,
}

fn run_cell(spec: &SweepSpec, cell: &[(String, String)], out: &Path) -> Result<EvalReport> {
    let mut kv = spec.base.clone();
    for (k, v) in cell {
        kv.set(k, v);
    }
    let mut cfg = RunConfig::from_kv(&kv, &spec.base_dir)?;
    cfg.out = out.to_path_buf();
    let t = train(cfg, None)?;
    let r = evaluate(&t, &t.cfg.dataset.clone(), spec.split, 1.0)?;
    r.write(&out.join(format!("eval-{}", spec.split)))?;
    Ok(r)
}

/// Trains and evaluates every cell in order under `out/cell-NNN`, and
/// writes `results.tsv`. Failed cells are recorded and skipped.
pub fn run_sweep(spec: &SweepSpec, out: &Path) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let one = |i: usize, cell: Vec<(String, String)>| {
        let dir = out.join(format!("cell-{i:03}"));
        let outcome = run_cell(spec, &cell, &dir).map_err(|e| {
            log::warn!("sweep cell {i} failed: {e}");
            e.to_string()
        });
        SweepRow { cell, outcome }
    };
    let cells = spec.cells();
    if spec.parallel {
        let rows: Vec<SweepRow> = cells.into_par_iter().enumerate().map(|(i, c)| one(i, c)).collect();
        write_text(&out.join("results.tsv"), &results_table(spec, &rows))?;
        return Ok(rows);
    }
    let mut rows = Vec::new();
    for (i, cell) in cells.into_iter().enumerate() {
        rows.push(one(i, cell));
        write_text(&out.join("results.tsv"), &results_table(spec, &rows))?;
    }
    Ok(rows)
}

const METRIC_COLUMNS: &[&str] = &["miou", "abs_rel", "rmse", "epe", "s3r0_mse1", "s3r0_env1", "s3r0_mse2", "s3r0_env2", "loss"];

pub fn results_table(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut s = String::from("cell");
    for (k, _) in &spec.axes {
        let _ = write!(s, "\t{k}");
    }
    for c in METRIC_COLUMNS {
        let _ = write!(s, "\t{c}");
    }
    s.push_str("\tstatus\n");
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(s, "{i:03}");
        for (_, v) in &row.cell {
            let _ = write!(s, "\t{v}");
        }
        match &row.outcome {
            Ok(r) => {
                let kv = r.to_kv();
                for c in METRIC_COLUMNS {
                    let _ = write!(s, "\t{}", kv.get(c).unwrap_or("-"));
                }
                s.push_str("\tok\n");
            }
            Err(e) => {
                for _ in METRIC_COLUMNS {
                    s.push_str("\t-");
                }
                let _ = writeln!(s, "\tfailed: {}", e.replace(['\t', '\n'], " "));
            }
        }
    }
    s
}
