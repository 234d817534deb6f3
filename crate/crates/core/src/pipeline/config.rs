use std::path::{Path, PathBuf};

use crate::dsp::DEFAULT_TARGET_RMS;
use crate::error::{Error, Result};
use crate::formats::KvMap;
use crate::losses::{LossWeights, S3rLossMode};
use crate::model::{ModelConfig, MODEL_KEYS};
use crate::nn::AdamConfig;

/// Everything a training or evaluation run needs, read from one flat
/// `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub s3r_loss: S3rLossMode,
    pub adam: AdamConfig,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Gain applied to input waveforms before preprocessing.
    pub amp: f64,
    pub target_rms: f64,
    /// Caps the number of training clips (all when `None`).
    pub max_train: Option<usize>,
    /// Save a checkpoint every epoch, not only at the end and on the best
    /// validation loss.
    pub checkpoint_every_epoch: bool,
}

const RUN_KEYS: &[&str] = &[
    "dataset", "out", "lr", "beta1", "beta2", "adam_eps", "seed", "epochs", "batch_size", "amp",
    "target_rms", "max_train", "lambda1", "lambda2", "lambda3", "alpha_spec", "fft_sizes",
    "s3r_loss", "checkpoint_every_epoch",
];

impl RunConfig {
    /// Defaults for a model; dataset and output paths still need setting.
    pub fn new(model: ModelConfig) -> Self {
        RunConfig {
            dataset: PathBuf::from("data"),
            out: PathBuf::from("run"),
            weights: LossWeights::for_encoder(model.encoder),
            s3r_loss: S3rLossMode::for_encoder(model.encoder),
            model,
            adam: AdamConfig::default(),
            seed: 0,
            epochs: 20,
            batch_size: 2,
            amp: 1.0,
            target_rms: DEFAULT_TARGET_RMS,
            max_train: None,
            checkpoint_every_epoch: true,
        }
    }

    /// Relative paths are resolved against `base`.
    pub fn from_kv(kv: &KvMap, base: &Path) -> Result<Self> {
        let known: Vec<&str> = RUN_KEYS.iter().chain(MODEL_KEYS).copied().collect();
        kv.check_known(&known)?;
        let model = ModelConfig::from_kv(kv)?;
        let d = RunConfig::new(model);
        let path = |key: &str, default: &Path| -> PathBuf {
            match kv.get(key) {
                Some(p) => base.join(p),
                None => default.to_path_buf(),
            }
        };
        let s3r_loss = match kv.get("s3r_loss") {
            None => d.s3r_loss,
            Some("complex_l2") => S3rLossMode::ComplexL2,
            Some("multiscale") => S3rLossMode::Multiscale,
            Some(s) => return Err(Error::Config(format!("unknown s3r_loss {s:?}"))),
        };
        let cfg = RunConfig {
            dataset: path("dataset", &d.dataset),
            out: path("out", &d.out),
            weights: LossWeights {
                lambda1: kv.parse_or("lambda1", d.weights.lambda1)?,
                lambda2: kv.parse_or("lambda2", d.weights.lambda2)?,
                lambda3: kv.parse_or("lambda3", d.weights.lambda3)?,
                alpha_spec: kv.parse_or("alpha_spec", d.weights.alpha_spec)?,
                fft_sizes: kv.list_or("fft_sizes", d.weights.fft_sizes.clone())?,
            },
            s3r_loss,
            adam: AdamConfig {
                lr: kv.parse_or("lr", d.adam.lr)?,
                beta1: kv.parse_or("beta1", d.adam.beta1)?,
                beta2: kv.parse_or("beta2", d.adam.beta2)?,
                eps: kv.parse_or("adam_eps", d.adam.eps)?,
            },
            seed: kv.parse_or("seed", d.seed)?,
            epochs: kv.parse_or("epochs", d.epochs)?,
            batch_size: kv.parse_or("batch_size", d.batch_size)?,
            amp: kv.parse_or("amp", d.amp)?,
            target_rms: kv.parse_or("target_rms", d.target_rms)?,
            max_train: match kv.get("max_train") {
                Some(_) => Some(kv.require("max_train")?),
                None => None,
            },
            checkpoint_every_epoch: kv.parse_or("checkpoint_every_epoch", d.checkpoint_every_epoch)?,
            model: d.model,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_kv(&KvMap::load(path)?, base)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = self.model.to_kv();
        kv.set("dataset", self.dataset.display());
        kv.set("out", self.out.display());
        kv.set("lr", self.adam.lr);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("adam_eps", self.adam.eps);
        kv.set("seed", self.seed);
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("amp", self.amp);
        kv.set("target_rms", self.target_rms);
        if let Some(m) = self.max_train {
            kv.set("max_train", m);
        }
        kv.set("lambda1", self.weights.lambda1);
        kv.set("lambda2", self.weights.lambda2);
        kv.set("lambda3", self.weights.lambda3);
        kv.set("alpha_spec", self.weights.alpha_spec);
        kv.set(
            "fft_sizes",
            self.weights.fft_sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.set(
            "s3r_loss",
            match self.s3r_loss {
                S3rLossMode::ComplexL2 => "complex_l2",
                S3rLossMode::Multiscale => "multiscale",
            },
        );
        kv.set("checkpoint_every_epoch", self.checkpoint_every_epoch);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.amp.is_finite() && self.amp >= 0.0) {
            return Err(Error::Config(format!("amp must be finite and >= 0, got {}", self.amp)));
        }
        if !(self.target_rms.is_finite() && self.target_rms > 0.0) {
            return Err(Error::Config("target_rms must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let kv = KvMap::parse("dataset = d\nencoder = ddsp\ntasks = SDMR\nlr = 0.001\n").unwrap();
        let cfg = RunConfig::from_kv(&kv, Path::new("/base")).unwrap();
        assert_eq!(cfg.dataset, PathBuf::from("/base/d"));
        assert_eq!(cfg.weights.lambda3, 0.02);
        assert_eq!(cfg.s3r_loss, S3rLossMode::Multiscale);
        let back = RunConfig::from_kv(&cfg.to_kv(), Path::new("")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys() {
        let kv = KvMap::parse("colour = blue\n").unwrap();
        assert!(matches!(RunConfig::from_kv(&kv, Path::new(".")), Err(Error::Config(_))));
    }
}
