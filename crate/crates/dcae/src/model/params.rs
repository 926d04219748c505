//! Parameter stores for the generator and discriminator.
//!
//! Parameters live outside any tape as named, shaped, flat f32 buffers;
//! binding into a `Graph` happens per forward pass. `iter`/`iter_mut`
//! fix the canonical ordering used by checkpoints and the optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{LayerKind, ModelConfig, ShapePlan};

/// Initial slope for every PReLU unit.
pub const PRELU_INIT: f32 = 0.25;

/// A named, flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Param {
            name,
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// One generator layer: a conv (or transposed-conv) weight and, on all but
/// the final output layer, per-channel PReLU slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct GenLayer {
    pub weight: Param,
    pub alpha: Option<Param>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub enc: Vec<GenLayer>,
    pub dec: Vec<GenLayer>,
}

/// One discriminator conv block: weight, batch-norm scale/shift, PReLU slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscConvLayer {
    pub weight: Param,
    pub gamma: Param,
    pub beta: Param,
    pub alpha: Param,
}

/// One discriminator dense layer; the final scoring layer has no PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
    pub alpha: Option<Param>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub conv: Vec<DiscConvLayer>,
    pub fc: Vec<DenseLayer>,
}

impl GeneratorParams {
    /// Canonical parameter order: encoder (weight, alpha) pairs, then
    /// decoder (weight, alpha-if-present).
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.enc
            .iter()
            .chain(self.dec.iter())
            .flat_map(|l| std::iter::once(&l.weight).chain(l.alpha.as_ref()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.enc
            .iter_mut()
            .chain(self.dec.iter_mut())
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.alpha.as_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.iter().map(Param::numel).sum()
    }
}

impl DiscriminatorParams {
    /// Canonical parameter order: conv blocks (weight, gamma, beta, alpha),
    /// then dense layers (weight, bias, alpha-if-present).
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        let conv = self.conv.iter().flat_map(|l| {
            [&l.weight, &l.gamma, &l.beta, &l.alpha].into_iter()
        });
        let fc = self.fc.iter().flat_map(|l| {
            std::iter::once(&l.weight)
                .chain(std::iter::once(&l.bias))
                .chain(l.alpha.as_ref())
        });
        conv.chain(fc)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        let conv = self.conv.iter_mut().flat_map(|l| {
            vec![&mut l.weight, &mut l.gamma, &mut l.beta, &mut l.alpha].into_iter()
        });
        let fc = self.fc.iter_mut().flat_map(|l| {
            let mut v = vec![&mut l.weight, &mut l.bias];
            v.extend(l.alpha.as_mut());
            v.into_iter()
        });
        conv.chain(fc)
    }

    pub fn param_count(&self) -> usize {
        self.iter().map(Param::numel).sum()
    }
}

/// Zero-filled parameter structures with the exact names and shapes the
/// config dictates. Checkpoint loading fills these in place; `init_params`
/// overwrites them with the starting values.
pub fn param_layout(config: &ModelConfig) -> (GeneratorParams, DiscriminatorParams) {
    let plan = ShapePlan::new(config).expect("param_layout requires a validated config");
    let k = plan.kernel;
    let enc_count = plan.generator_encoder_layers();

    let mut enc = Vec::new();
    let mut dec = Vec::new();
    for (i, layer) in plan.generator.iter().enumerate() {
        let (c_in, c_out) = (layer.in_channels, layer.out_channels);
        if i < enc_count {
            // Conv weight layout: out x in x k.
            enc.push(GenLayer {
                weight: Param::zeros(format!("{}.weight", layer.name), vec![c_out, c_in, k]),
                alpha: Some(Param::zeros(format!("{}.alpha", layer.name), vec![c_out])),
            });
        } else {
            // Transposed-conv weight layout: in x out x k.
            let last = i + 1 == plan.generator.len();
            dec.push(GenLayer {
                weight: Param::zeros(format!("{}.weight", layer.name), vec![c_in, c_out, k]),
                alpha: (!last).then(|| Param::zeros(format!("{}.alpha", layer.name), vec![c_out])),
            });
        }
    }

    let mut conv = Vec::new();
    let mut fc = Vec::new();
    for (i, layer) in plan.discriminator.iter().enumerate() {
        let (f_in, f_out) = (layer.in_channels, layer.out_channels);
        match layer.kind {
            LayerKind::Conv => conv.push(DiscConvLayer {
                weight: Param::zeros(format!("{}.weight", layer.name), vec![f_out, f_in, k]),
                gamma: Param::zeros(format!("{}.gamma", layer.name), vec![f_out]),
                beta: Param::zeros(format!("{}.beta", layer.name), vec![f_out]),
                alpha: Param::zeros(format!("{}.alpha", layer.name), vec![f_out]),
            }),
            LayerKind::Dense => {
                let last = i + 1 == plan.discriminator.len();
                fc.push(DenseLayer {
                    weight: Param::zeros(format!("{}.weight", layer.name), vec![f_out, f_in]),
                    bias: Param::zeros(format!("{}.bias", layer.name), vec![f_out]),
                    alpha: (!last)
                        .then(|| Param::zeros(format!("{}.alpha", layer.name), vec![f_out])),
                });
            }
            LayerKind::ConvTransposed => unreachable!("discriminator has no transposed convs"),
        }
    }

    (GeneratorParams { enc, dec }, DiscriminatorParams { conv, fc })
}

/// Uniform fan-in init: each weight ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
/// drawn in f64 and rounded once to f32. Gammas start at 1, PReLU slopes at
/// 0.25, biases and betas at 0. Only weights consume randomness, in
/// canonical parameter order, so the stream is reproducible from the seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> (GeneratorParams, DiscriminatorParams) {
    let (mut gen, mut disc) = param_layout(config);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut fill_uniform = |p: &mut Param, fan_in: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in &mut p.data {
            let u: f64 = rng.gen();
            *v = ((2.0 * u - 1.0) * bound) as f32;
        }
    };

    for layer in &mut gen.enc {
        // out x in x k: fan-in is in * k.
        let fan_in = layer.weight.shape[1] * layer.weight.shape[2];
        fill_uniform(&mut layer.weight, fan_in);
        layer.alpha.as_mut().unwrap().data.fill(PRELU_INIT);
    }
    for layer in &mut gen.dec {
        // in x out x k: fan-in is in * k.
        let fan_in = layer.weight.shape[0] * layer.weight.shape[2];
        fill_uniform(&mut layer.weight, fan_in);
        if let Some(a) = &mut layer.alpha {
            a.data.fill(PRELU_INIT);
        }
    }
    for layer in &mut disc.conv {
        let fan_in = layer.weight.shape[1] * layer.weight.shape[2];
        fill_uniform(&mut layer.weight, fan_in);
        layer.gamma.data.fill(1.0);
        layer.alpha.data.fill(PRELU_INIT);
    }
    for layer in &mut disc.fc {
        let fan_in = layer.weight.shape[1];
        fill_uniform(&mut layer.weight, fan_in);
        if let Some(a) = &mut layer.alpha {
            a.data.fill(PRELU_INIT);
        }
    }

    (gen, disc)
}
