//! The multitask network: a shared encoder (spectrogram, DDSP or both), an
//! ASPP context module, dense decoders for the panoramic maps and the S3R
//! mask decoder.

mod config;
mod s3r;

pub use config::{
    format_pairs, parse_pairs, DdspConfig, EncoderKind, ModelConfig, Task, TaskSet, ENCODER_GEOMETRY, MODEL_KEYS,
};
pub use s3r::{apply_complex_mask, mask_from_tensor, s3r_reconstruct, BinauralPair, ComplexMask};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{BatchNorm, Conv2d, ConvTranspose2d, Gru, Linear};
use crate::nn::{concat, Binding, ConvGeometry, ParamStore, Real, Tensor, Var};
use config::encoder_geometry;

/// Number of semantic classes, background included.
pub const NUM_CLASSES: usize = 4;
pub const ASPP_RATES: [usize; 3] = [6, 12, 18];

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm,
}

impl ConvBn {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        g: ConvGeometry,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvBn {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, g, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
        }
    }

    fn forward<'t, T: Real>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.bn.forward(b, self.conv.forward(b, x)?)?.relu())
    }
}

#[derive(Debug, Clone)]
struct DdspBranch {
    norm: BatchNorm,
    gru: Gru,
    proj: Linear,
    mlp: Vec<Linear>,
}

#[derive(Debug, Clone)]
struct DenseDecoder {
    hidden: [ConvBn; 2],
    out: Conv2d,
    softmax: bool,
}

impl DenseDecoder {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        width: usize,
        cout: usize,
        softmax: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let one = ConvGeometry::new(1, 1, 0, 1);
        DenseDecoder {
            hidden: [
                ConvBn::new(store, &format!("{name}.0"), cin, width, one, rng),
                ConvBn::new(store, &format!("{name}.1"), width, width, one, rng),
            ],
            out: Conv2d::new(store, &format!("{name}.out"), width, cout, one, true, rng),
            softmax,
        }
    }

    /// Feature maps are laid out (frequency, time); the frequency axis is
    /// mapped onto azimuth columns and time onto rows before upsampling.
    fn forward<'t, T: Real>(
        &self,
        b: &Binding<'t, '_, T>,
        feat: Var<'t, T>,
        grid: (usize, usize),
    ) -> Result<Var<'t, T>> {
        let mut x = feat.permute(&[0, 1, 3, 2])?.resize_bilinear(grid.0, grid.1)?;
        for layer in &self.hidden {
            x = layer.forward(b, x)?;
        }
        let y = self.out.forward(b, x)?;
        if self.softmax {
            y.softmax(1)
        } else {
            Ok(y)
        }
    }
}

#[derive(Debug, Clone)]
struct S3rDecoder {
    ups: Vec<(ConvTranspose2d, BatchNorm)>,
    out: Conv2d,
}

/// Encoder inputs for a batch of `N` clips with `C` input channels.
#[derive(Debug, Clone, Default)]
pub struct ModelInput<T> {
    /// `(N, C, bins, frames)` normalized log-magnitude spectrograms.
    pub spec: Option<Tensor<T>>,
    /// `(N, C, frames, 2 + mfcc)`: f0 over `f0_max`, standardized loudness,
    /// then MFCCs.
    pub ddsp: Option<Tensor<T>>,
    /// `(N, 2, 2, bins, frames)`: complex spectrograms (real, imaginary) of
    /// the left and right reference ears.
    pub reference: Option<Tensor<T>>,
}

impl<T: Real> ModelInput<T> {
    pub fn batch_size(&self) -> Result<usize> {
        let mut n = None;
        for t in [&self.spec, &self.ddsp, &self.reference].into_iter().flatten() {
            let m = t.shape()[0];
            if *n.get_or_insert(m) != m {
                return Err(Error::Config("model inputs disagree on batch size".into()));
            }
        }
        n.ok_or_else(|| Error::Config("model input is empty".into()))
    }
}

/// Outputs of one forward pass; disabled tasks are `None`.
#[derive(Debug, Clone, Copy)]
pub struct Prediction<'t, T: Real> {
    /// `(N, 4, H, W)` class probabilities.
    pub semantic: Option<Var<'t, T>>,
    /// `(N, 1, H, W)` normalized depth.
    pub depth: Option<Var<'t, T>>,
    /// `(N, 2, H, W)` flow in pixels.
    pub flow: Option<Var<'t, T>>,
    /// `(N, 4P, bins, frames)` complex masks in `[-1, 1]`; channel
    /// `4p + 2·ear + {0: real, 1: imaginary}`.
    pub mask: Option<Var<'t, T>>,
    /// `(N, P, 2, 2, bins, frames)` predicted difference spectrograms, when
    /// reference spectrograms were supplied.
    pub diff_spec: Option<Var<'t, T>>,
}

#[derive(Debug, Clone)]
pub struct SoundNet {
    pub config: ModelConfig,
    spec_encoder: Option<Vec<ConvBn>>,
    ddsp_encoder: Option<DdspBranch>,
    aspp_branches: Vec<ConvBn>,
    aspp_fuse: ConvBn,
    semantic: Option<DenseDecoder>,
    depth: Option<DenseDecoder>,
    motion: Option<DenseDecoder>,
    s3r: Option<S3rDecoder>,
}

impl SoundNet {
    /// Registers all parameters in `store`, initialized from `seed`.
    pub fn new<T: Real>(config: ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let g = encoder_geometry();
        let cc = &config.conv_channels;
        let top = cc[3];
        let spec_encoder = config.encoder.uses_spectrogram().then(|| {
            let mut cin = 1;
            (0..4)
                .map(|i| {
                    let l = ConvBn::new(store, &format!("enc.{i}"), cin, cc[i], g, rng);
                    cin = cc[i];
                    l
                })
                .collect()
        });
        let ddsp_encoder = if config.encoder.uses_ddsp() {
            let dd = &config.ddsp;
            let (_, frames) = config.spectrogram_grid();
            let (h, w) = config.feature_grid()?;
            let mut mlp = Vec::new();
            let mut width = frames * (dd.z_dim + 2);
            for i in 0..dd.mlp_layers {
                let out = if i + 1 == dd.mlp_layers { top * h * w } else { dd.mlp_hidden };
                mlp.push(Linear::new(store, &format!("ddsp.mlp.{i}"), width, out, rng));
                width = out;
            }
            Some(DdspBranch {
                norm: BatchNorm::new(store, "ddsp.norm", dd.mfcc_coeffs),
                gru: Gru::new(store, "ddsp.gru", dd.mfcc_coeffs, dd.gru_units, rng),
                proj: Linear::new(store, "ddsp.proj", dd.gru_units, dd.z_dim, rng),
                mlp,
            })
        } else {
            None
        };
        let cin = config.encoder_channels();
        let a = config.aspp_filters;
        let mut aspp_branches = vec![ConvBn::new(store, "aspp.0", cin, a, ConvGeometry::new(1, 1, 0, 1), rng)];
        for (i, &r) in ASPP_RATES.iter().enumerate() {
            aspp_branches.push(ConvBn::new(
                store,
                &format!("aspp.{}", i + 1),
                cin,
                a,
                ConvGeometry::new(3, 1, r, r),
                rng,
            ));
        }
        let aspp_fuse = ConvBn::new(store, "aspp.fuse", 4 * a, a, ConvGeometry::new(1, 1, 0, 1), rng);
        let dc = config.decoder_channels;
        let tasks = config.tasks;
        let semantic = tasks
            .contains(Task::Semantic)
            .then(|| DenseDecoder::new(store, "semantic", a, dc, NUM_CLASSES, true, rng));
        let depth = tasks
            .contains(Task::Depth)
            .then(|| DenseDecoder::new(store, "depth", a, dc, 1, false, rng));
        let motion = tasks
            .contains(Task::Motion)
            .then(|| DenseDecoder::new(store, "motion", a, dc, 2, false, rng));
        let s3r = tasks.contains(Task::S3r).then(|| {
            let mut cin = a;
            let ups = config
                .up_channels
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let l = (
                        ConvTranspose2d::new(store, &format!("s3r.up.{i}"), cin, c, g, false, rng),
                        BatchNorm::new(store, &format!("s3r.up.{i}.bn"), c),
                    );
                    cin = c;
                    l
                })
                .collect();
            let out = Conv2d::new(
                store,
                "s3r.out",
                cin,
                4 * config.s3r_pairs.len(),
                ConvGeometry::new(1, 1, 0, 1),
                true,
                rng,
            );
            S3rDecoder { ups, out }
        });
        Ok(SoundNet {
            config,
            spec_encoder,
            ddsp_encoder,
            aspp_branches,
            aspp_fuse,
            semantic,
            depth,
            motion,
            s3r,
        })
    }

    fn spectrogram_features<'t, T: Real>(&self, b: &Binding<'t, '_, T>, spec: &Tensor<T>) -> Result<Var<'t, T>> {
        let layers = self.spec_encoder.as_ref().expect("spectrogram encoder");
        let s = spec.shape();
        let (bins, frames) = self.config.spectrogram_grid();
        if s.len() != 4 || s[1] != self.config.input_channels.len() || s[2] != bins || s[3] != frames {
            return Err(Error::Config(format!(
                "spectrogram input {s:?} does not match ({}, {bins}, {frames}) per clip",
                self.config.input_channels.len()
            )));
        }
        let (n, c) = (s[0], s[1]);
        let mut x = b.tape.constant(spec.clone()).reshape(&[n * c, 1, bins, frames])?;
        for l in layers {
            x = l.forward(b, x)?;
        }
        let sh = x.shape();
        x.reshape(&[n, c * sh[1], sh[2], sh[3]])
    }

    fn ddsp_features<'t, T: Real>(&self, b: &Binding<'t, '_, T>, feats: &Tensor<T>) -> Result<Var<'t, T>> {
        let br = self.ddsp_encoder.as_ref().expect("ddsp encoder");
        let dd = &self.config.ddsp;
        let (_, frames) = self.config.spectrogram_grid();
        let s = feats.shape();
        let f = dd.frame_features();
        if s.len() != 4 || s[1] != self.config.input_channels.len() || s[2] != frames || s[3] != f {
            return Err(Error::Config(format!(
                "DDSP input {s:?} does not match ({}, {frames}, {f}) per clip",
                self.config.input_channels.len()
            )));
        }
        let (n, c) = (s[0], s[1]);
        let m = n * c;
        let x = b.tape.constant(feats.clone()).reshape(&[m, frames, f])?;
        let f0_loud = x.narrow(2, 0, 2)?;
        let mfcc = br.norm.forward(b, x.narrow(2, 2, dd.mfcc_coeffs)?.permute(&[0, 2, 1])?)?;
        let (seq, _) = br.gru.forward(b, mfcc.permute(&[2, 0, 1])?, None)?;
        let z = br
            .proj
            .forward(b, seq.reshape(&[frames * m, dd.gru_units])?)?
            .reshape(&[frames, m, dd.z_dim])?
            .permute(&[1, 0, 2])?;
        let mut h = concat(&[f0_loud, z], 2)?.reshape(&[m, frames * (dd.z_dim + 2)])?;
        for (i, l) in br.mlp.iter().enumerate() {
            h = l.forward(b, h)?;
            if i + 1 < br.mlp.len() {
                h = h.relu();
            }
        }
        let top = self.config.conv_channels[3];
        let (fh, fw) = self.config.feature_grid()?;
        h.reshape(&[n, c * top, fh, fw])
    }

    /// Encoder output before the context module, `(N, C', h, w)`.
    pub fn encode<'t, T: Real>(&self, b: &Binding<'t, '_, T>, input: &ModelInput<T>) -> Result<Var<'t, T>> {
        let need = |t: &Option<Tensor<T>>, what: &str| {
            t.clone().ok_or_else(|| Error::Config(format!("{} encoder needs {what} input", self.config.encoder)))
        };
        match self.config.encoder {
            EncoderKind::Spectrogram => self.spectrogram_features(b, &need(&input.spec, "spectrogram")?),
            EncoderKind::Ddsp => self.ddsp_features(b, &need(&input.ddsp, "DDSP")?),
            EncoderKind::Combined => {
                let s = self.spectrogram_features(b, &need(&input.spec, "spectrogram")?)?;
                let d = self.ddsp_features(b, &need(&input.ddsp, "DDSP")?)?;
                if s.shape()[2..] != d.shape()[2..] {
                    return Err(Error::Config(format!(
                        "branch grids differ: {:?} vs {:?}",
                        s.shape(),
                        d.shape()
                    )));
                }
                concat(&[s, d], 1)
            }
        }
    }

    /// Four parallel branches (1×1 and dilated 3×3), concatenated and fused
    /// by a 1×1 convolution. Spatial size is preserved.
    pub fn aspp<'t, T: Real>(&self, b: &Binding<'t, '_, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let parts = self
            .aspp_branches
            .iter()
            .map(|l| l.forward(b, x))
            .collect::<Result<Vec<_>>>()?;
        self.aspp_fuse.forward(b, concat(&parts, 1)?)
    }

    fn s3r_mask<'t, T: Real>(&self, b: &Binding<'t, '_, T>, feat: Var<'t, T>) -> Result<Var<'t, T>> {
        let dec = self.s3r.as_ref().expect("s3r decoder");
        let mut x = feat;
        for (up, bn) in &dec.ups {
            x = bn.forward(b, up.forward(b, x)?)?.relu();
        }
        let m = dec.out.forward(b, x)?.sigmoid().scale(T::of(2.0)).add_scalar(T::of(-1.0));
        let (bins, frames) = self.config.spectrogram_grid();
        fit_grid(m, bins, frames)
    }

    /// One encoder pass followed by the decoders named in `tasks`.
    pub fn forward<'t, T: Real>(
        &self,
        b: &Binding<'t, '_, T>,
        input: &ModelInput<T>,
        tasks: TaskSet,
    ) -> Result<Prediction<'t, T>> {
        if !tasks.is_subset(self.config.tasks) {
            return Err(Error::Config(format!(
                "model has decoders for {} but {} were requested",
                self.config.tasks, tasks
            )));
        }
        input.batch_size()?;
        let feat = self.aspp(b, self.encode(b, input)?)?;
        let grid = (self.config.grid_height, self.config.grid_width);
        let dense = |d: &Option<DenseDecoder>, t: Task| -> Result<Option<Var<'t, T>>> {
            match d {
                Some(d) if tasks.contains(t) => d.forward(b, feat, grid).map(Some),
                _ => Ok(None),
            }
        };
        let semantic = dense(&self.semantic, Task::Semantic)?;
        let depth = dense(&self.depth, Task::Depth)?;
        let flow = dense(&self.motion, Task::Motion)?;
        let (mask, diff_spec) = if tasks.contains(Task::S3r) {
            let mask = self.s3r_mask(b, feat)?;
            let diff = match &input.reference {
                Some(r) => Some(apply_complex_mask(mask, b.tape.constant(r.clone()))?),
                None => None,
            };
            (Some(mask), diff)
        } else {
            (None, None)
        };
        Ok(Prediction {
            semantic,
            depth,
            flow,
            mask,
            diff_spec,
        })
    }
}

/// Center-crops the two trailing axes to at most `(h, w)`, then resizes
/// bilinearly if the result is still smaller.
fn fit_grid<'t, T: Real>(x: Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    let r = s.len();
    let (ch, cw) = (s[r - 2].min(h), s[r - 1].min(w));
    let x = x
        .narrow(r - 2, (s[r - 2] - ch) / 2, ch)?
        .narrow(r - 1, (s[r - 1] - cw) / 2, cw)?;
    if (ch, cw) == (h, w) {
        Ok(x)
    } else {
        x.resize_bilinear(h, w)
    }
}
