//! Evaluation metrics for the panoramic maps and S3R audio.

use ndarray::{Array2, Array3, Zip};

use crate::dsp::{envelope, stft, StftParams, Waveform};
use crate::error::{Error, Result};

/// Intersection and union counts per foreground class, accumulated over
/// any number of label grids.
#[derive(Debug, Clone, PartialEq)]
pub struct IouAccumulator {
    classes: Vec<u8>,
    inter: Vec<u64>,
    union: Vec<u64>,
}

impl IouAccumulator {
    pub fn new(classes: &[u8]) -> Self {
        IouAccumulator {
            classes: classes.to_vec(),
            inter: vec![0; classes.len()],
            union: vec![0; classes.len()],
        }
    }

    pub fn add(&mut self, pred: &Array2<u8>, gt: &Array2<u8>) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::InvalidInput(format!(
                "label grids differ: {:?} vs {:?}",
                pred.dim(),
                gt.dim()
            )));
        }
        for (k, &c) in self.classes.iter().enumerate() {
            Zip::from(pred).and(gt).for_each(|&p, &g| {
                let (a, b) = (p == c, g == c);
                self.inter[k] += u64::from(a && b);
                self.union[k] += u64::from(a || b);
            });
        }
        Ok(())
    }

    /// IoU per class, `None` where the class appears in neither grid.
    pub fn per_class(&self) -> Vec<(u8, Option<f64>)> {
        self.classes
            .iter()
            .enumerate()
            .map(|(k, &c)| (c, (self.union[k] > 0).then(|| self.inter[k] as f64 / self.union[k] as f64)))
            .collect()
    }

    /// Mean over classes with a defined IoU.
    pub fn mean(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class().into_iter().filter_map(|(_, v)| v).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Per-class IoU and their mean for one pair of grids. Classes absent from
/// both are left out of the mean.
pub fn miou(pred: &Array2<u8>, gt: &Array2<u8>, classes: &[u8]) -> Result<(Vec<(u8, Option<f64>)>, Option<f64>)> {
    let mut acc = IouAccumulator::new(classes);
    acc.add(pred, gt)?;
    Ok((acc.per_class(), acc.mean()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub mse: f64,
    /// Pixels that entered the averages.
    pub count: usize,
}

/// Depth errors in meters over pixels with positive ground truth.
pub fn depth_metrics(pred: &Array2<f64>, gt: &Array2<f64>) -> Result<DepthMetrics> {
    if pred.dim() != gt.dim() {
        return Err(Error::InvalidInput(format!(
            "depth grids differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let (mut abs_rel, mut sq_rel, mut sq, mut n, mut skipped) = (0.0, 0.0, 0.0, 0usize, 0usize);
    Zip::from(pred).and(gt).for_each(|&p, &g| {
        if g > 0.0 {
            let e = p - g;
            abs_rel += e.abs() / g;
            sq_rel += e * e / g;
            sq += e * e;
            n += 1;
        } else {
            skipped += 1;
        }
    });
    if skipped > 0 {
        log::warn!("depth metrics skipped {skipped} pixels with non-positive ground truth");
    }
    if n == 0 {
        return Err(Error::DegenerateStatistics("no pixel has positive ground-truth depth".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        mse: sq / nf,
        count: n,
    })
}

/// Mean endpoint error between flow fields `(2, H, W)`.
pub fn epe(pred: &Array3<f64>, gt: &Array3<f64>) -> Result<f64> {
    if pred.dim() != gt.dim() || pred.dim().0 != 2 {
        return Err(Error::InvalidInput(format!(
            "flow fields must both be (2, H, W), got {:?} and {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let (_, h, w) = pred.dim();
    if h * w == 0 {
        return Ok(0.0);
    }
    let d = pred - gt;
    let total: f64 = Zip::from(d.index_axis(ndarray::Axis(0), 0))
        .and(d.index_axis(ndarray::Axis(0), 1))
        .fold(0.0, |acc, &u, &v| acc + u.hypot(v));
    Ok(total / (h * w) as f64)
}

/// Spectrogram MSE and envelope error for one ear.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EarMetrics {
    pub mse: f64,
    pub env: f64,
}

/// Mean squared complex-spectrogram difference and mean squared envelope
/// difference, per ear.
pub fn s3r_metrics(pred: [&Waveform; 2], gt: [&Waveform; 2], p: &StftParams) -> Result<[EarMetrics; 2]> {
    let mut out = [EarMetrics::default(); 2];
    for ear in 0..2 {
        let (a, b) = (pred[ear], gt[ear]);
        if a.len() != b.len() {
            return Err(Error::InvalidInput(format!(
                "waveform lengths differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        let (sa, sb) = (stft(a, p)?, stft(b, p)?);
        let mse = Zip::from(&sa.data)
            .and(&sb.data)
            .fold(0.0, |acc, x, y| acc + (x - y).norm_sqr())
            / sa.data.len().max(1) as f64;
        let (ea, eb) = (envelope(a), envelope(b));
        let env = ea.iter().zip(&eb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / ea.len().max(1) as f64;
        out[ear] = EarMetrics { mse, env };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn miou_cases() {
        let gt = array![[1u8, 2, 3], [0, 0, 0]];
        assert_eq!(miou(&gt, &gt, &[1, 2, 3]).unwrap().1, Some(1.0));
        let pred = array![[1u8, 0], [0, 0]];
        let gt = array![[1u8, 1], [0, 0]];
        assert_eq!(miou(&pred, &gt, &[1]).unwrap().1, Some(0.5));
        let (per, mean) = miou(&pred, &gt, &[1, 2]).unwrap();
        assert_eq!(per[1], (2, None));
        assert_eq!(mean, Some(0.5));
    }

    #[test]
    fn depth_cases() {
        let g = array![[2.0]];
        let m = depth_metrics(&array![[3.0]], &g).unwrap();
        assert!((m.abs_rel - 0.5).abs() < 1e-12);
        assert!((m.sq_rel - 0.5).abs() < 1e-12);
        assert!((m.rmse - 1.0).abs() < 1e-12);
        assert!((m.mse - 1.0).abs() < 1e-12);
        let g = array![[1.0, 4.0], [2.5, 9.0]];
        assert_eq!(depth_metrics(&g, &g).unwrap().rmse, 0.0);
        assert!((depth_metrics(&(&g * 2.0), &g).unwrap().abs_rel - 1.0).abs() < 1e-12);
        let with_hole = array![[1.0, 0.0]];
        assert_eq!(depth_metrics(&with_hole, &with_hole).unwrap().count, 1);
    }

    #[test]
    fn epe_cases() {
        let mut p = Array3::zeros((2, 1, 1));
        p[[0, 0, 0]] = 3.0;
        p[[1, 0, 0]] = 4.0;
        assert!((epe(&p, &Array3::zeros((2, 1, 1))).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(epe(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn s3r_metric_cases() {
        let p = StftParams::default();
        let w = Waveform::new((0..4000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect(), 16000).unwrap();
        let neg = w.scaled(-1.0);
        let same = s3r_metrics([&w, &w], [&w, &w], &p).unwrap();
        assert_eq!(same[0], EarMetrics { mse: 0.0, env: 0.0 });
        let flipped = s3r_metrics([&neg, &w], [&w, &w], &p).unwrap();
        assert!(flipped[0].env < 1e-20 && flipped[0].mse > 0.0);
        assert_eq!(flipped[1].mse, 0.0);
    }

    proptest! {
        #[test]
        fn epe_translation_invariant(
            vals in proptest::collection::vec(-5.0f64..5.0, 16),
            shift in (-3.0f64..3.0, -3.0f64..3.0),
        ) {
            let a = Array3::from_shape_vec((2, 2, 2), vals[..8].to_vec()).unwrap();
            let b = Array3::from_shape_vec((2, 2, 2), vals[8..].to_vec()).unwrap();
            let mut a2 = a.clone();
            let mut b2 = b.clone();
            for arr in [&mut a2, &mut b2] {
                arr.index_axis_mut(ndarray::Axis(0), 0).mapv_inplace(|v| v + shift.0);
                arr.index_axis_mut(ndarray::Axis(0), 1).mapv_inplace(|v| v + shift.1);
            }
            prop_assert!((epe(&a, &b).unwrap() - epe(&a2, &b2).unwrap()).abs() < 1e-9);
        }
    }
}
