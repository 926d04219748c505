//! Generator and discriminator definitions for the two enhancer variants.
//!
//! `ModelConfig` pins every hyperparameter; `ShapePlan` derives the full
//! layer-by-layer shape bookkeeping from it (and is the single source of
//! truth for parameter shapes, names, and ordering); `BoundGenerator` /
//! `BoundDiscriminator` bind parameter buffers into a tape and run forwards.

mod checkpoint;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use params::{
    init_params, param_layout, DenseLayer, DiscConvLayer, DiscriminatorParams, GenLayer,
    GeneratorParams, Param, PRELU_INIT,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Graph, TensorError, TensorId};

/// Batch-norm epsilon used by every discriminator layer.
pub const BN_EPS: f32 = 1e-5;

const DCAE_GEN: [usize; 22] = [
    16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024, 512, 256, 256, 128, 128, 64, 64, 32, 32,
    16, 1,
];
const DCAE_DISC: [usize; 11] = [16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024];
const DCAE10_GEN: [usize; 10] = [64, 128, 256, 512, 1024, 512, 256, 128, 64, 1];
const DCAE10_DISC: [usize; 5] = [64, 128, 256, 512, 1024];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("discriminator needs a batch of at least 2 items for batch statistics, got {0}")]
    BatchTooSmall(usize),
    #[error("latent tensor shape {got:?} does not match the code shape {want:?}")]
    LatentShape { got: Vec<usize>, want: Vec<usize> },
    #[error("input shape {got:?} does not match expected {want:?}")]
    InputShape { got: Vec<usize>, want: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "DCAE")]
    Dcae,
    #[serde(rename = "DCAE10")]
    Dcae10,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Dcae => "DCAE",
            Variant::Dcae10 => "DCAE10",
        })
    }
}

impl Variant {
    fn base_gen(&self) -> &'static [usize] {
        match self {
            Variant::Dcae => &DCAE_GEN,
            Variant::Dcae10 => &DCAE10_GEN,
        }
    }

    fn base_disc(&self) -> &'static [usize] {
        match self {
            Variant::Dcae => &DCAE_DISC,
            Variant::Dcae10 => &DCAE10_DISC,
        }
    }

    fn required_stride(&self) -> usize {
        match self {
            Variant::Dcae => 2,
            Variant::Dcae10 => 4,
        }
    }

    /// Encoder depth: layers up to and including the widest (code) layer.
    pub fn encoder_layers(&self) -> usize {
        match self {
            Variant::Dcae => 11,
            Variant::Dcae10 => 5,
        }
    }
}

/// Every hyperparameter of a model + training recipe, JSON-serializable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub stride: usize,
    pub kernel: usize,
    pub gen_channels: Vec<usize>,
    pub disc_channels: Vec<usize>,
    pub fc_hidden: Vec<usize>,
    pub window: usize,
    pub sample_rate: u32,
    pub preemphasis: bool,
    pub lambda0: f64,
    pub lambda_decay_rate: f64,
    pub lambda_decay_start_epoch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl ModelConfig {
    /// Speech recipe: 22-layer stride-2 model, pre-emphasis on.
    pub fn speech() -> Self {
        ModelConfig {
            variant: Variant::Dcae,
            stride: 2,
            kernel: 31,
            gen_channels: DCAE_GEN.to_vec(),
            disc_channels: DCAE_DISC.to_vec(),
            fc_hidden: vec![256, 128],
            window: 16384,
            sample_rate: 16000,
            preemphasis: true,
            lambda0: 100.0,
            lambda_decay_rate: 1e-5,
            lambda_decay_start_epoch: 100,
            epochs: 110,
            learning_rate: 5e-5,
            batch_size: 64,
        }
    }

    /// Applause recipe: 10-layer stride-4 model, pre-emphasis off, longer
    /// training with an earlier decay start.
    pub fn applause() -> Self {
        ModelConfig {
            variant: Variant::Dcae10,
            stride: 4,
            kernel: 31,
            gen_channels: DCAE10_GEN.to_vec(),
            disc_channels: DCAE10_DISC.to_vec(),
            fc_hidden: vec![256, 128],
            window: 16384,
            sample_rate: 16000,
            preemphasis: false,
            lambda0: 100.0,
            lambda_decay_rate: 1e-5,
            lambda_decay_start_epoch: 30,
            epochs: 130,
            learning_rate: 5e-5,
            batch_size: 64,
        }
    }

    /// Same topology with every channel count divided by `divisor`
    /// (the final 1-channel output stays 1). Used for desk-scale runs.
    pub fn scaled_down(variant: Variant, divisor: usize) -> Self {
        let mut cfg = match variant {
            Variant::Dcae => Self::speech(),
            Variant::Dcae10 => Self::applause(),
        };
        let n = cfg.gen_channels.len();
        for c in &mut cfg.gen_channels[..n - 1] {
            *c /= divisor;
        }
        for c in &mut cfg.disc_channels {
            *c /= divisor;
        }
        cfg
    }

    fn fail(key: &str, msg: String) -> ModelError {
        ModelError::Config(format!("{}: {}", key, msg))
    }

    /// Check every invariant; all other model entry points require this.
    pub fn validate(&self) -> Result<(), ModelError> {
        let base_gen = self.variant.base_gen();
        let base_disc = self.variant.base_disc();
        if self.stride != self.variant.required_stride() {
            return Err(Self::fail(
                "stride",
                format!("variant {} requires stride {}", self.variant, self.variant.required_stride()),
            ));
        }
        if self.kernel != 31 {
            return Err(Self::fail("kernel", format!("must be 31, got {}", self.kernel)));
        }
        if self.window != 16384 {
            return Err(Self::fail("window", format!("must be 16384 samples, got {}", self.window)));
        }
        if self.sample_rate != 16000 {
            return Err(Self::fail(
                "sample_rate",
                format!("must be 16000 Hz, got {}", self.sample_rate),
            ));
        }
        if self.gen_channels.len() != base_gen.len() {
            return Err(Self::fail(
                "gen_channels",
                format!("variant {} has {} layers, got {}", self.variant, base_gen.len(), self.gen_channels.len()),
            ));
        }
        if *self.gen_channels.last().unwrap() != 1 {
            return Err(Self::fail("gen_channels", "final layer must produce 1 channel".into()));
        }
        // The channel lists must be the variant's lists divided by one
        // uniform width divisor (1 for the full-size models).
        let first = self.gen_channels[0];
        if first == 0 || base_gen[0] % first != 0 {
            return Err(Self::fail(
                "gen_channels",
                format!("first entry {} does not divide the base width {}", first, base_gen[0]),
            ));
        }
        let divisor = base_gen[0] / first;
        for (i, (&got, &base)) in self.gen_channels.iter().zip(base_gen).enumerate() {
            if i + 1 < base_gen.len() && got * divisor != base {
                return Err(Self::fail(
                    "gen_channels",
                    format!("entry {} is {}, inconsistent with width divisor {}", i, got, divisor),
                ));
            }
        }
        if self.disc_channels.len() != base_disc.len() {
            return Err(Self::fail(
                "disc_channels",
                format!("variant {} has {} conv layers, got {}", self.variant, base_disc.len(), self.disc_channels.len()),
            ));
        }
        for (i, (&got, &base)) in self.disc_channels.iter().zip(base_disc).enumerate() {
            if got * divisor != base {
                return Err(Self::fail(
                    "disc_channels",
                    format!("entry {} is {}, inconsistent with width divisor {}", i, got, divisor),
                ));
            }
        }
        if self.fc_hidden.len() != 2 || self.fc_hidden.iter().any(|&h| h == 0) {
            return Err(Self::fail(
                "fc_hidden",
                format!("exactly two positive hidden sizes required, got {:?}", self.fc_hidden),
            ));
        }
        let depth = self.variant.encoder_layers();
        let shrink = self.stride.pow(depth as u32);
        if self.window % shrink != 0 || self.window / shrink == 0 {
            return Err(Self::fail(
                "window",
                format!("{} is not divisible into {} encoder halvings", self.window, depth),
            ));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Self::fail("lambda0", format!("must be positive, got {}", self.lambda0)));
        }
        if !(0.0..1.0).contains(&self.lambda_decay_rate) {
            return Err(Self::fail(
                "lambda_decay_rate",
                format!("must lie in [0, 1), got {}", self.lambda_decay_rate),
            ));
        }
        if self.epochs == 0 {
            return Err(Self::fail("epochs", "must be at least 1".into()));
        }
        if self.lambda_decay_start_epoch >= self.epochs {
            return Err(Self::fail(
                "lambda_decay_start_epoch",
                format!("{} must be below epochs {}", self.lambda_decay_start_epoch, self.epochs),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Self::fail(
                "learning_rate",
                format!("must be finite and non-negative, got {}", self.learning_rate),
            ));
        }
        if self.batch_size < 2 {
            return Err(Self::fail(
                "batch_size",
                format!("must be at least 2 for batch statistics, got {}", self.batch_size),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTransposed,
    Dense,
}

/// One layer's shape bookkeeping. For dense layers, channels are feature
/// widths and lengths are 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub param_count: usize,
}

impl LayerPlan {
    pub fn is_conv(&self) -> bool {
        matches!(self.kind, LayerKind::Conv | LayerKind::ConvTransposed)
    }
}

/// Complete derived geometry of a config: every layer of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapePlan {
    pub generator: Vec<LayerPlan>,
    pub discriminator: Vec<LayerPlan>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    pub window: usize,
    pub code_channels: usize,
    pub code_len: usize,
    enc_layers: usize,
}

impl ShapePlan {
    pub fn new(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (s, k, t) = (config.stride, config.kernel, config.window);
        let pad = (k - 1) / 2;
        let output_pad = s - 1;
        let enc_layers = config.variant.encoder_layers();

        let mut generator = Vec::with_capacity(config.gen_channels.len());
        let mut len = t;
        let mut in_ch = 1;
        for i in 0..enc_layers {
            let out_ch = config.gen_channels[i];
            generator.push(LayerPlan {
                name: format!("g.enc.{}", i),
                kind: LayerKind::Conv,
                in_channels: in_ch,
                out_channels: out_ch,
                in_len: len,
                out_len: len / s,
                param_count: out_ch * in_ch * k + out_ch,
            });
            in_ch = out_ch;
            len /= s;
        }
        let code_channels = in_ch;
        let code_len = len;

        let dec_total = config.gen_channels.len() - enc_layers;
        let mut in_ch = 2 * code_channels; // code concatenated with z
        for j in 0..dec_total {
            let out_ch = config.gen_channels[enc_layers + j];
            let last = j + 1 == dec_total;
            generator.push(LayerPlan {
                name: format!("g.dec.{}", j),
                kind: LayerKind::ConvTransposed,
                in_channels: in_ch,
                out_channels: out_ch,
                in_len: len,
                out_len: len * s,
                param_count: in_ch * out_ch * k + if last { 0 } else { out_ch },
            });
            len *= s;
            if !last {
                // Next stage sees this output concatenated with the
                // same-resolution encoder activation.
                in_ch = out_ch + config.gen_channels[enc_layers - 2 - j];
            }
        }
        debug_assert_eq!(len, t);

        let mut discriminator = Vec::new();
        let mut len = t;
        let mut in_ch = 2; // candidate stacked with the coded conditioning
        for (i, &out_ch) in config.disc_channels.iter().enumerate() {
            discriminator.push(LayerPlan {
                name: format!("d.conv.{}", i),
                kind: LayerKind::Conv,
                in_channels: in_ch,
                out_channels: out_ch,
                in_len: len,
                out_len: len / s,
                param_count: out_ch * in_ch * k + 3 * out_ch,
            });
            in_ch = out_ch;
            len /= s;
        }
        let mut f_in = in_ch * len; // flatten width
        let widths: Vec<usize> = config.fc_hidden.iter().copied().chain([1]).collect();
        for (j, &f_out) in widths.iter().enumerate() {
            let last = j + 1 == widths.len();
            discriminator.push(LayerPlan {
                name: format!("d.fc.{}", j),
                kind: LayerKind::Dense,
                in_channels: f_in,
                out_channels: f_out,
                in_len: 1,
                out_len: 1,
                param_count: f_out * f_in + f_out + if last { 0 } else { f_out },
            });
            f_in = f_out;
        }

        Ok(ShapePlan {
            generator,
            discriminator,
            kernel: k,
            stride: s,
            pad,
            output_pad,
            window: t,
            code_channels,
            code_len,
            enc_layers,
        })
    }

    pub fn generator_encoder_layers(&self) -> usize {
        self.enc_layers
    }

    pub fn generator_param_count(&self) -> usize {
        self.generator.iter().map(|l| l.param_count).sum()
    }

    pub fn discriminator_param_count(&self) -> usize {
        self.discriminator.iter().map(|l| l.param_count).sum()
    }

    /// Shape of the z tensor for a batch of `n` items.
    pub fn code_shape(&self, n: usize) -> Vec<usize> {
        vec![n, self.code_channels, self.code_len]
    }
}

/// Generator parameters bound into a tape as leaves.
pub struct BoundGenerator {
    enc: Vec<(TensorId, TensorId)>,
    dec: Vec<(TensorId, Option<TensorId>)>,
    stride: usize,
    pad: usize,
    output_pad: usize,
    window: usize,
    code_channels: usize,
    code_len: usize,
}

impl BoundGenerator {
    pub fn bind(
        g: &mut Graph<f32>,
        params: &GeneratorParams,
        plan: &ShapePlan,
        trainable: bool,
    ) -> Self {
        let enc = params
            .enc
            .iter()
            .map(|l| {
                let w = g.leaf(l.weight.data.clone(), l.weight.shape.clone(), trainable);
                let a = l.alpha.as_ref().expect("encoder layers carry PReLU slopes");
                let a = g.leaf(a.data.clone(), a.shape.clone(), trainable);
                (w, a)
            })
            .collect();
        let dec = params
            .dec
            .iter()
            .map(|l| {
                let w = g.leaf(l.weight.data.clone(), l.weight.shape.clone(), trainable);
                let a = l
                    .alpha
                    .as_ref()
                    .map(|a| g.leaf(a.data.clone(), a.shape.clone(), trainable));
                (w, a)
            })
            .collect();
        BoundGenerator {
            enc,
            dec,
            stride: plan.stride,
            pad: plan.pad,
            output_pad: plan.output_pad,
            window: plan.window,
            code_channels: plan.code_channels,
            code_len: plan.code_len,
        }
    }

    /// Leaf ids in the same order as `GeneratorParams::iter`.
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::new();
        for (w, a) in &self.enc {
            ids.push(*w);
            ids.push(*a);
        }
        for (w, a) in &self.dec {
            ids.push(*w);
            if let Some(a) = a {
                ids.push(*a);
            }
        }
        ids
    }

    /// Enhance a batch: x_tilde N x 1 x T plus z at the code shape -> N x 1 x T.
    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        x_tilde: TensorId,
        z: TensorId,
    ) -> Result<TensorId, ModelError> {
        let xs = g.shape(x_tilde).to_vec();
        if xs.len() != 3 || xs[1] != 1 || xs[2] != self.window {
            return Err(ModelError::InputShape {
                got: xs,
                want: vec![0, 1, self.window],
            });
        }
        let n = xs[0];
        let want_z = vec![n, self.code_channels, self.code_len];
        if g.shape(z) != want_z.as_slice() {
            return Err(ModelError::LatentShape {
                got: g.shape(z).to_vec(),
                want: want_z,
            });
        }

        let mut acts = Vec::with_capacity(self.enc.len());
        let mut h = x_tilde;
        for (w, a) in &self.enc {
            h = g.conv1d(h, *w, self.stride, self.pad)?;
            h = g.prelu(h, *a)?;
            acts.push(h);
        }
        let code = *acts.last().expect("encoder is non-empty");
        let mut h = g.concat_channels(code, z)?;
        for (j, (w, a)) in self.dec.iter().enumerate() {
            if j > 0 {
                let skip = acts[self.enc.len() - 1 - j];
                h = g.concat_channels(h, skip)?;
            }
            h = g.conv1d_transposed(h, *w, self.stride, self.pad, self.output_pad)?;
            h = match a {
                Some(a) => g.prelu(h, *a)?,
                None => g.tanh(h),
            };
        }
        Ok(h)
    }
}

/// Discriminator parameters bound into a tape as leaves.
pub struct BoundDiscriminator {
    conv: Vec<(TensorId, TensorId, TensorId, TensorId)>,
    fc: Vec<(TensorId, TensorId, Option<TensorId>)>,
    stride: usize,
    pad: usize,
    window: usize,
}

impl BoundDiscriminator {
    pub fn bind(
        g: &mut Graph<f32>,
        params: &DiscriminatorParams,
        plan: &ShapePlan,
        trainable: bool,
    ) -> Self {
        let conv = params
            .conv
            .iter()
            .map(|l| {
                (
                    g.leaf(l.weight.data.clone(), l.weight.shape.clone(), trainable),
                    g.leaf(l.gamma.data.clone(), l.gamma.shape.clone(), trainable),
                    g.leaf(l.beta.data.clone(), l.beta.shape.clone(), trainable),
                    g.leaf(l.alpha.data.clone(), l.alpha.shape.clone(), trainable),
                )
            })
            .collect();
        let fc = params
            .fc
            .iter()
            .map(|l| {
                (
                    g.leaf(l.weight.data.clone(), l.weight.shape.clone(), trainable),
                    g.leaf(l.bias.data.clone(), l.bias.shape.clone(), trainable),
                    l.alpha
                        .as_ref()
                        .map(|a| g.leaf(a.data.clone(), a.shape.clone(), trainable)),
                )
            })
            .collect();
        BoundDiscriminator {
            conv,
            fc,
            stride: plan.stride,
            pad: plan.pad,
            window: plan.window,
        }
    }

    /// Leaf ids in the same order as `DiscriminatorParams::iter`.
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::new();
        for (w, gm, bt, a) in &self.conv {
            ids.extend([*w, *gm, *bt, *a]);
        }
        for (w, b, a) in &self.fc {
            ids.push(*w);
            ids.push(*b);
            if let Some(a) = a {
                ids.push(*a);
            }
        }
        ids
    }

    /// Score a batch of candidates against their coded conditioning:
    /// both N x 1 x T -> one unbounded real per item (shape N).
    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        candidate: TensorId,
        x_tilde: TensorId,
    ) -> Result<TensorId, ModelError> {
        let cs = g.shape(candidate).to_vec();
        if cs != g.shape(x_tilde) {
            return Err(ModelError::InputShape {
                got: g.shape(x_tilde).to_vec(),
                want: cs,
            });
        }
        if cs.len() != 3 || cs[1] != 1 || cs[2] != self.window {
            return Err(ModelError::InputShape {
                got: cs,
                want: vec![0, 1, self.window],
            });
        }
        let n = cs[0];
        if n < 2 {
            return Err(ModelError::BatchTooSmall(n));
        }
        let mut h = g.concat_channels(candidate, x_tilde)?;
        for (w, gamma, beta, alpha) in &self.conv {
            h = g.conv1d(h, *w, self.stride, self.pad)?;
            h = g.batchnorm1d(h, *gamma, *beta, BN_EPS)?;
            h = g.prelu(h, *alpha)?;
        }
        let hs = g.shape(h).to_vec();
        h = g.reshape(h, vec![n, hs[1] * hs[2]])?;
        for (w, b, alpha) in &self.fc {
            h = g.dense(h, *w, *b)?;
            if let Some(a) = alpha {
                h = g.prelu(h, *a)?;
            }
        }
        g.reshape(h, vec![n]).map_err(Into::into)
    }
}
