//! Adversarial training: least-squares GAN losses with an L1 term, RMSprop
//! updates, and the epoch loop with per-epoch checkpoints and resume.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::audio::{epoch_batches, Batch, PairedDataset};
use crate::model::{
    init_params, load_checkpoint, save_checkpoint, BoundDiscriminator, BoundGenerator,
    CheckpointError, DiscriminatorParams, GeneratorParams, ModelConfig, ModelError, Param,
    ShapePlan,
};
use crate::tensor::{rmsprop_step, Element, Graph, RmsPropState, TensorError, TensorId};

pub const RMSPROP_RHO: f32 = 0.9;
pub const RMSPROP_EPS: f32 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "non-finite training signal at step {step} (lambda {lambda}): \
         d_loss {d_loss}, g_loss {g_loss}, d grad norm {d_grad_norm}, g grad norm {g_grad_norm}"
    )]
    NonFinite {
        step: u64,
        lambda: f64,
        d_loss: f64,
        g_loss: f64,
        d_grad_norm: f64,
        g_grad_norm: f64,
    },
    #[error("dataset yields no full batch of {batch_size} windows ({chunks} available)")]
    EmptyDataset { batch_size: usize, chunks: usize },
    #[error("checkpoint config does not match the requested run: {0}")]
    ResumeConfigMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Everything that must persist across a save/resume besides the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: u64,
    pub step: u64,
    pub lambda: f64,
    /// Seed the z-stream rng was constructed from (stream 1 of this seed).
    pub rng_seed: u64,
    pub rng: ChaCha20Rng,
    pub g_opt: Vec<RmsPropState<f32>>,
    pub d_opt: Vec<RmsPropState<f32>>,
}

impl TrainState {
    pub fn new(
        config: &ModelConfig,
        gen: &GeneratorParams,
        disc: &DiscriminatorParams,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(1); // stream 0 is weight init
        TrainState {
            epoch: 0,
            step: 0,
            lambda: config.lambda0,
            rng_seed: seed,
            rng,
            g_opt: gen.iter().map(|p| RmsPropState::new(p.numel())).collect(),
            d_opt: disc.iter().map(|p| RmsPropState::new(p.numel())).collect(),
        }
    }

    /// Geometric decay applied at the end of every step once the decay
    /// epoch is reached; before that the weight stays exactly lambda0.
    pub fn advance_lambda(&mut self, config: &ModelConfig) {
        if self.epoch >= config.lambda_decay_start_epoch as u64 {
            self.lambda *= 1.0 - config.lambda_decay_rate;
        }
    }
}

/// Least-squares discriminator loss:
/// mean((d_real - 1)^2) / 2 + mean(d_fake^2) / 2.
pub fn d_loss<T: Element>(
    g: &mut Graph<T>,
    d_real: TensorId,
    d_fake: TensorId,
) -> Result<TensorId, TensorError> {
    let real = g.sub_scalar(d_real, T::one());
    let real = g.square(real);
    let real = g.mean_all(real);
    let real = g.scale(real, T::from_f64(0.5));
    let fake = g.square(d_fake);
    let fake = g.mean_all(fake);
    let fake = g.scale(fake, T::from_f64(0.5));
    g.add(real, fake)
}

pub struct GenLossParts {
    pub total: TensorId,
    pub adversarial: TensorId,
    pub l1: TensorId,
}

/// Generator loss: mean((d_fake - 1)^2) / 2 + lambda * mean|enhanced - original|.
/// The parts are returned so callers can report the raw L1 term.
pub fn g_loss<T: Element>(
    g: &mut Graph<T>,
    d_fake: TensorId,
    enhanced: TensorId,
    original: TensorId,
    lambda: f64,
) -> Result<GenLossParts, TensorError> {
    let adv = g.sub_scalar(d_fake, T::one());
    let adv = g.square(adv);
    let adv = g.mean_all(adv);
    let adv = g.scale(adv, T::from_f64(0.5));
    let l1 = g.l1_loss(enhanced, original)?;
    let weighted = g.scale(l1, T::from_f64(lambda));
    let total = g.add(adv, weighted)?;
    Ok(GenLossParts {
        total,
        adversarial: adv,
        l1,
    })
}

/// Standard-normal latent draw for a batch of `n`, consuming the rng in a
/// fixed order (item-major).
pub fn sample_z(rng: &mut ChaCha20Rng, plan: &ShapePlan, n: usize) -> Vec<f32> {
    let count = n * plan.code_channels * plan.code_len;
    (0..count)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            v as f32
        })
        .collect()
}

fn grad_norm(tape: &Graph<f32>, ids: &[TensorId]) -> f64 {
    let mut s = 0.0f64;
    for id in ids {
        if let Some(grad) = tape.grad(*id) {
            for &v in grad {
                s += v as f64 * v as f64;
            }
        }
    }
    s.sqrt()
}

fn apply_updates<'a>(
    params: impl Iterator<Item = &'a mut Param>,
    ids: &[TensorId],
    tape: &Graph<f32>,
    opt: &mut [RmsPropState<f32>],
    lr: f32,
) -> Result<(), TrainError> {
    for ((p, id), st) in params.zip(ids).zip(opt.iter_mut()) {
        let grad = tape
            .grad(*id)
            .expect("trainable leaf has a gradient after backward");
        rmsprop_step(&mut p.data, grad, st, lr, RMSPROP_RHO, RMSPROP_EPS)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub d_loss: f64,
    pub g_loss: f64,
    pub l1: f64,
    pub d_grad_norm: f64,
    pub g_grad_norm: f64,
    /// Lambda after this step's decay.
    pub lambda: f64,
}

/// Discriminator half-step: one RMSprop update on the LSGAN objective with
/// the generator frozen (the fake batch is materialized and detached, so by
/// construction no generator parameter can change). Returns (loss, grad norm).
fn discriminator_update(
    config: &ModelConfig,
    plan: &ShapePlan,
    gen: &GeneratorParams,
    disc: &mut DiscriminatorParams,
    state: &mut TrainState,
    batch: &Batch,
) -> Result<(f64, f64), TrainError> {
    let n = batch.n;
    let t = plan.window;
    let fake_data = {
        let mut tape = Graph::<f32>::new();
        let coded = tape.leaf(batch.coded.clone(), vec![n, 1, t], false);
        let zv = sample_z(&mut state.rng, plan, n);
        let z = tape.leaf(zv, plan.code_shape(n), false);
        let bg = BoundGenerator::bind(&mut tape, gen, plan, false);
        let fake = bg.forward(&mut tape, coded, z)?;
        tape.data(fake).to_vec()
    };

    let mut tape = Graph::<f32>::new();
    let original = tape.leaf(batch.original.clone(), vec![n, 1, t], false);
    let coded = tape.leaf(batch.coded.clone(), vec![n, 1, t], false);
    let fake = tape.leaf(fake_data, vec![n, 1, t], false);
    let bd = BoundDiscriminator::bind(&mut tape, disc, plan, true);
    let d_real = bd.forward(&mut tape, original, coded)?;
    let d_fake = bd.forward(&mut tape, fake, coded)?;
    let loss = d_loss(&mut tape, d_real, d_fake)?;
    let v = tape.scalar_value(loss) as f64;
    tape.backward(loss)?;
    let ids = bd.param_ids();
    let norm = grad_norm(&tape, &ids);
    if !v.is_finite() || !norm.is_finite() {
        return Err(TrainError::NonFinite {
            step: state.step,
            lambda: state.lambda,
            d_loss: v,
            g_loss: f64::NAN,
            d_grad_norm: norm,
            g_grad_norm: f64::NAN,
        });
    }
    apply_updates(
        disc.iter_mut(),
        &ids,
        &tape,
        &mut state.d_opt,
        config.learning_rate as f32,
    )?;
    Ok((v, norm))
}

/// Generator half-step: a fresh latent draw, one RMSprop update on the
/// adversarial + weighted-L1 objective with the discriminator frozen.
/// Returns (loss, raw L1, grad norm).
fn generator_update(
    config: &ModelConfig,
    plan: &ShapePlan,
    gen: &mut GeneratorParams,
    disc: &DiscriminatorParams,
    state: &mut TrainState,
    batch: &Batch,
) -> Result<(f64, f64, f64), TrainError> {
    let n = batch.n;
    let t = plan.window;
    let mut tape = Graph::<f32>::new();
    let original = tape.leaf(batch.original.clone(), vec![n, 1, t], false);
    let coded = tape.leaf(batch.coded.clone(), vec![n, 1, t], false);
    let zv = sample_z(&mut state.rng, plan, n);
    let z = tape.leaf(zv, plan.code_shape(n), false);
    let bg = BoundGenerator::bind(&mut tape, gen, plan, true);
    let bd = BoundDiscriminator::bind(&mut tape, disc, plan, false);
    let fake = bg.forward(&mut tape, coded, z)?;
    let d_fake = bd.forward(&mut tape, fake, coded)?;
    let parts = g_loss(&mut tape, d_fake, fake, original, state.lambda)?;
    let v = tape.scalar_value(parts.total) as f64;
    let l1 = tape.scalar_value(parts.l1) as f64;
    tape.backward(parts.total)?;
    let ids = bg.param_ids();
    let norm = grad_norm(&tape, &ids);
    if !v.is_finite() || !norm.is_finite() {
        return Err(TrainError::NonFinite {
            step: state.step,
            lambda: state.lambda,
            d_loss: f64::NAN,
            g_loss: v,
            d_grad_norm: f64::NAN,
            g_grad_norm: norm,
        });
    }
    apply_updates(
        gen.iter_mut(),
        &ids,
        &tape,
        &mut state.g_opt,
        config.learning_rate as f32,
    )?;
    Ok((v, l1, norm))
}

/// One full GAN step on one batch: a discriminator update on a detached
/// fake batch, then a generator update with a fresh latent draw, then the
/// lambda schedule.
pub fn train_step(
    config: &ModelConfig,
    plan: &ShapePlan,
    gen: &mut GeneratorParams,
    disc: &mut DiscriminatorParams,
    state: &mut TrainState,
    batch: &Batch,
) -> Result<StepStats, TrainError> {
    let (d_loss_v, d_grad_norm) = discriminator_update(config, plan, gen, disc, state, batch)?;
    let (g_loss_v, l1_v, g_grad_norm) =
        generator_update(config, plan, gen, disc, state, batch).map_err(|e| match e {
            TrainError::NonFinite {
                step,
                lambda,
                g_loss,
                g_grad_norm,
                ..
            } => TrainError::NonFinite {
                step,
                lambda,
                d_loss: d_loss_v,
                g_loss,
                d_grad_norm,
                g_grad_norm,
            },
            other => other,
        })?;

    state.step += 1;
    state.advance_lambda(config);
    Ok(StepStats {
        d_loss: d_loss_v,
        g_loss: g_loss_v,
        l1: l1_v,
        d_grad_norm,
        g_grad_norm,
        lambda: state.lambda,
    })
}

/// Shuffle seed for one epoch: a dedicated ChaCha stream per epoch keeps
/// batch order reproducible and independent of resume points.
pub fn epoch_shuffle_rng(seed: u64, epoch: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(100 + epoch);
    rng
}

#[derive(Debug, Clone)]
pub struct StepLog {
    pub epoch: u64,
    pub step: u64,
    pub batches_in_epoch: usize,
    pub batch_index: usize,
    /// λ that weighted the L1 term in this step (decay applies afterwards).
    pub lambda_used: f64,
    pub stats: StepStats,
}

fn checkpoint_path(dir: &Path, epoch: u64) -> PathBuf {
    dir.join(format!("epoch-{:04}.dcae", epoch))
}

/// Newest `epoch-NNNN.dcae` in `dir`, if any.
pub fn find_latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let entries = std::fs::read_dir(dir).ok()?;
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries.flatten() {
        let path = entry.path();
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(stem) = name.strip_prefix("epoch-").and_then(|s| s.strip_suffix(".dcae")) else {
            continue;
        };
        let Ok(epoch) = stem.parse::<u64>() else {
            continue;
        };
        if best.as_ref().map_or(true, |(e, _)| epoch > *e) {
            best = Some((epoch, path));
        }
    }
    best.map(|(_, p)| p)
}

/// Run (or resume) training until `config.epochs` epochs are complete,
/// writing a checkpoint after every epoch.
pub fn run_training(
    config: &ModelConfig,
    dataset: &PairedDataset,
    checkpoint_dir: &Path,
    seed: u64,
    mut on_step: impl FnMut(&StepLog),
) -> Result<(), TrainError> {
    let plan = ShapePlan::new(config)?;
    std::fs::create_dir_all(checkpoint_dir).map_err(|e| {
        TrainError::Checkpoint(CheckpointError::Io {
            path: checkpoint_dir.display().to_string(),
            source: e,
        })
    })?;

    let (mut gen, mut disc, mut state) = match find_latest_checkpoint(checkpoint_dir) {
        Some(path) => {
            let ckpt = load_checkpoint(&path)?;
            if ckpt.config != *config {
                return Err(TrainError::ResumeConfigMismatch(format!(
                    "{} was written by a different config",
                    path.display()
                )));
            }
            (ckpt.gen, ckpt.disc, ckpt.state)
        }
        None => {
            let (gen, disc) = init_params(config, seed);
            let state = TrainState::new(config, &gen, &disc, seed);
            (gen, disc, state)
        }
    };

    let preemph = config.preemphasis.then_some(crate::audio::PREEMPHASIS_COEFF);
    while state.epoch < config.epochs as u64 {
        let mut shuffle_rng = epoch_shuffle_rng(seed, state.epoch);
        let batches = epoch_batches(dataset, config.batch_size, preemph, &mut shuffle_rng);
        if batches.is_empty() {
            return Err(TrainError::EmptyDataset {
                batch_size: config.batch_size,
                chunks: dataset.chunks.len(),
            });
        }
        for (i, batch) in batches.iter().enumerate() {
            let lambda_used = state.lambda;
            let stats = train_step(config, &plan, &mut gen, &mut disc, &mut state, batch)?;
            on_step(&StepLog {
                epoch: state.epoch,
                step: state.step,
                batches_in_epoch: batches.len(),
                batch_index: i,
                lambda_used,
                stats,
            });
        }
        state.epoch += 1;
        save_checkpoint(
            &checkpoint_path(checkpoint_dir, state.epoch),
            config,
            &gen,
            &disc,
            &state,
        )?;
    }
    save_checkpoint(&checkpoint_dir.join("final.dcae"), config, &gen, &disc, &state)?;
    Ok(())
}
