//! Command-line entry point: train, enhance, degrade, eval, shapes.
//!
//! Exit codes are a stable contract for scripting: 0 success, 2 usage or
//! configuration error, 3 runtime abort (non-finite training signal).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{
    assemble, chunk_inference, deemphasis, degrade, pair_dataset, preemphasis, read_wav,
    write_wav, AudioClip, AudioError, PREEMPHASIS_COEFF,
};
use crate::metrics::{self, EvalReport, MetricsError};
use crate::model::{
    load_checkpoint, BoundGenerator, CheckpointError, LayerKind, ModelConfig, ModelError,
    ShapePlan,
};
use crate::tensor::Graph;
use crate::train::{run_training, sample_z, TrainError};

/// On-disk run description: the model/training recipe plus everything the
/// trainer needs to find data and place checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub model: ModelConfig,
    pub original_dir: PathBuf,
    pub coded_dir: PathBuf,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::NonFinite { .. } => 3,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(
    name = "dcae",
    version,
    about = "GAN-based enhancement of coded audio",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model as described by a JSON run config.
    Train {
        /// Run config file (see presets/ for the two shipped recipes).
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
    },
    /// Enhance a WAV file with a trained generator checkpoint.
    Enhance {
        /// Checkpoint produced by `dcae train`.
        #[arg(long, value_name = "CKPT")]
        model: PathBuf,
        /// Input WAV (mono, at the model's sample rate).
        #[arg(long = "in", value_name = "WAV")]
        input: PathBuf,
        /// Output WAV path.
        #[arg(long = "out", value_name = "WAV")]
        output: PathBuf,
        /// Seed for the generator's noise input.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Produce a band-limited, noise-shaped stand-in for a coded file.
    Degrade {
        #[arg(long = "in", value_name = "WAV")]
        input: PathBuf,
        #[arg(long = "out", value_name = "WAV")]
        output: PathBuf,
        /// Retained bandwidth in Hz (must be below Nyquist).
        #[arg(long, value_name = "HZ")]
        bandwidth: f64,
        /// Noise level relative to per-band signal RMS (0 disables).
        #[arg(long, value_name = "LEVEL")]
        noise: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Report segmental SNR and log-spectral distance of a file pair.
    Eval {
        #[arg(long = "ref", value_name = "WAV")]
        reference: PathBuf,
        #[arg(long = "deg", value_name = "WAV")]
        degraded: PathBuf,
        /// Also dump the degraded file's magnitude spectrogram as CSV.
        #[arg(long, value_name = "CSV")]
        spectrogram: Option<PathBuf>,
    },
    /// Print the layer-by-layer shape plan for a config.
    Shapes {
        /// Run config file or a bare model config.
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
    },
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Enhance { model, input, output, seed } => {
            cmd_enhance(&model, &input, &output, seed)
        }
        Command::Degrade { input, output, bandwidth, noise, seed } => {
            cmd_degrade(&input, &output, bandwidth, noise, seed)
        }
        Command::Eval { reference, degraded, spectrogram } => {
            cmd_eval(&reference, &degraded, spectrogram.as_deref())
        }
        Command::Shapes { config } => cmd_shapes(&config),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {}", path.display(), e)))
}

fn load_run_config(path: &Path) -> Result<RunConfigFile, CliError> {
    let text = read_to_string(path)?;
    let cfg: RunConfigFile = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: {}", path.display(), e)))?;
    cfg.model.validate()?;
    Ok(cfg)
}

fn cmd_train(config_path: &Path) -> Result<(), CliError> {
    let cfg = load_run_config(config_path)?;
    for (dir, key) in [(&cfg.original_dir, "original_dir"), (&cfg.coded_dir, "coded_dir")] {
        if !dir.is_dir() {
            return Err(CliError::usage(format!(
                "{}: not a directory: {}",
                key,
                dir.display()
            )));
        }
    }
    let dataset = pair_dataset(
        &cfg.original_dir,
        &cfg.coded_dir,
        cfg.model.window,
        cfg.model.window / 2,
    )?;
    for skip in &dataset.skipped {
        eprintln!("skipped: {}", skip);
    }
    println!(
        "dataset: {} paired files, {} training chunks",
        dataset.items.len(),
        dataset.chunks.len()
    );
    run_training(&cfg.model, &dataset, &cfg.checkpoint_dir, cfg.seed, |log| {
        println!(
            "epoch {} step {} lambda {} d_loss {:.6} g_loss {:.6}",
            log.epoch, log.step, log.lambda_used, log.stats.d_loss, log.stats.g_loss
        );
    })?;
    println!("done: checkpoints in {}", cfg.checkpoint_dir.display());
    Ok(())
}

fn cmd_enhance(model: &Path, input: &Path, output: &Path, seed: u64) -> Result<(), CliError> {
    let ckpt = load_checkpoint(model)?;
    let config = ckpt.config;
    let plan = ShapePlan::new(&config)?;
    let clip = read_wav(input)?;
    if clip.sample_rate != config.sample_rate {
        return Err(CliError::usage(format!(
            "sample rate mismatch: input {} Hz, model expects {} Hz",
            clip.sample_rate, config.sample_rate
        )));
    }
    if clip.samples.is_empty() {
        return Err(CliError::usage(format!(
            "{}: input contains no samples",
            input.display()
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let start = Instant::now();
    // Bind the weights once; per-window activations are reclaimed by
    // truncating the tape back to this watermark after each forward.
    let mut g = Graph::<f32>::new();
    let bound = BoundGenerator::bind(&mut g, &ckpt.gen, &plan, false);
    let mark = g.len();
    let x = if config.preemphasis {
        preemphasis(&clip.samples, PREEMPHASIS_COEFF)
    } else {
        clip.samples.clone()
    };
    let chunks = chunk_inference(&x, config.window);
    let mut enhanced_windows = Vec::with_capacity(chunks.windows.len());
    for window in &chunks.windows {
        let z = sample_z(&mut rng, &plan, 1);
        let xt = g.leaf(window.clone(), vec![1, 1, config.window], false);
        let zt = g.leaf(z, plan.code_shape(1), false);
        let y = bound.forward(&mut g, xt, zt)?;
        enhanced_windows.push(g.data(y).to_vec());
        g.truncate(mark);
    }
    let assembled = assemble(&enhanced_windows, chunks.window, chunks.original_len)?;
    let samples = if config.preemphasis {
        deemphasis(&assembled, PREEMPHASIS_COEFF)
    } else {
        assembled
    };
    let wall = start.elapsed().as_secs_f64();

    debug_assert_eq!(samples.len(), clip.samples.len());
    write_wav(output, &AudioClip { samples, sample_rate: config.sample_rate })?;
    let rtf = metrics::rtf(clip.duration_seconds(), wall)?;
    println!(
        "enhanced {} samples ({:.3} s) in {:.3} s, rtf {:.3}",
        clip.samples.len(),
        clip.duration_seconds(),
        wall,
        rtf
    );
    Ok(())
}

fn cmd_degrade(
    input: &Path,
    output: &Path,
    bandwidth: f64,
    noise: f64,
    seed: u64,
) -> Result<(), CliError> {
    let clip = read_wav(input)?;
    let degraded = degrade(&clip, bandwidth, noise, seed)?;
    write_wav(output, &degraded)?;
    println!(
        "degraded {} samples to {:.0} Hz bandwidth, noise {}",
        degraded.samples.len(),
        bandwidth,
        noise
    );
    Ok(())
}

fn cmd_eval(reference: &Path, degraded: &Path, spectrogram: Option<&Path>) -> Result<(), CliError> {
    let r = read_wav(reference)?;
    let d = read_wav(degraded)?;
    if r.sample_rate != d.sample_rate {
        return Err(CliError::usage(format!(
            "sample rate mismatch: {} Hz vs {} Hz",
            r.sample_rate, d.sample_rate
        )));
    }
    let n = r.samples.len().min(d.samples.len());
    if r.samples.len() != d.samples.len() {
        println!(
            "note: length mismatch (ref {}, deg {}); comparing the first {} samples",
            r.samples.len(),
            d.samples.len(),
            n
        );
    }
    let rs = &r.samples[..n];
    let ds = &d.samples[..n];

    let start = Instant::now();
    let seg_snr_db = metrics::segmental_snr(rs, ds)?;
    let lsd_db = metrics::log_spectral_distance(rs, ds)?;
    let audio_seconds = n as f64 / r.sample_rate as f64;
    let rtf = metrics::rtf(audio_seconds, start.elapsed().as_secs_f64())?;

    let report = EvalReport {
        file: degraded.display().to_string(),
        samples: n,
        seg_snr_db,
        lsd_db,
        rtf,
    };
    println!("{}", EvalReport::tsv_header());
    println!("{}", report.tsv_line());
    println!(
        "{}",
        serde_json::to_string(&report).expect("report serializes")
    );

    if let Some(csv) = spectrogram {
        let frames = metrics::magnitude_frames(ds);
        let mut text = String::new();
        for row in &frames {
            let cells: Vec<String> = row.iter().map(|v| format!("{:.6e}", v)).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        std::fs::write(csv, text)
            .map_err(|e| CliError::usage(format!("{}: {}", csv.display(), e)))?;
        println!(
            "spectrogram: {} frames x {} bins -> {}",
            frames.len(),
            frames.first().map_or(0, Vec::len),
            csv.display()
        );
    }
    Ok(())
}

fn cmd_shapes(config_path: &Path) -> Result<(), CliError> {
    let text = read_to_string(config_path)?;
    // Accept either a full run config or a bare model config.
    let model: ModelConfig = match serde_json::from_str::<RunConfigFile>(&text) {
        Ok(run) => run.model,
        Err(_) => serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {}", config_path.display(), e)))?,
    };
    model.validate()?;
    let plan = ShapePlan::new(&model)?;

    let kind_name = |k: &LayerKind| match k {
        LayerKind::Conv => "conv",
        LayerKind::ConvTransposed => "conv_t",
        LayerKind::Dense => "dense",
    };
    println!(
        "{} stride {} kernel {} window {}",
        model.variant, plan.stride, plan.kernel, plan.window
    );
    println!(
        "{:<12} {:<7} {:>6} {:>7} {:>7} {:>8} {:>12}",
        "layer", "kind", "ch in", "ch out", "len in", "len out", "params"
    );
    let mut total = 0usize;
    println!("generator ({} layers):", plan.generator.len());
    for layer in &plan.generator {
        total += layer.param_count;
        println!(
            "{:<12} {:<7} {:>6} {:>7} {:>7} {:>8} {:>12}",
            layer.name,
            kind_name(&layer.kind),
            layer.in_channels,
            layer.out_channels,
            layer.in_len,
            layer.out_len,
            layer.param_count
        );
    }
    println!("code: {} x {}", plan.code_channels, plan.code_len);
    println!("generator parameters: {}", plan.generator_param_count());
    println!("discriminator ({} layers):", plan.discriminator.len());
    for layer in &plan.discriminator {
        total += layer.param_count;
        println!(
            "{:<12} {:<7} {:>6} {:>7} {:>7} {:>8} {:>12}",
            layer.name,
            kind_name(&layer.kind),
            layer.in_channels,
            layer.out_channels,
            layer.in_len,
            layer.out_len,
            layer.param_count
        );
    }
    println!(
        "discriminator parameters: {}",
        plan.discriminator_param_count()
    );
    println!("total parameters: {}", total);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preset(name: &str) -> RunConfigFile {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../presets")
            .join(name);
        let text = std::fs::read_to_string(&path).unwrap();
        serde_json::from_str(&text).unwrap()
    }

    #[test]
    fn shipped_presets_match_the_builtin_recipes() {
        let speech = preset("speech.json");
        assert_eq!(speech.model, ModelConfig::speech());
        speech.model.validate().unwrap();
        let applause = preset("applause.json");
        assert_eq!(applause.model, ModelConfig::applause());
        applause.model.validate().unwrap();
    }

    #[test]
    fn only_the_non_finite_abort_maps_to_exit_code_3() {
        let abort = TrainError::NonFinite {
            step: 1,
            lambda: 1.0,
            d_loss: f64::NAN,
            g_loss: 1.0,
            d_grad_norm: 1.0,
            g_grad_norm: 1.0,
        };
        assert_eq!(CliError::from(abort).code, 3);
        let usage = TrainError::EmptyDataset { batch_size: 2, chunks: 0 };
        assert_eq!(CliError::from(usage).code, 2);
    }

    #[test]
    fn run_config_rejects_unknown_and_missing_keys() {
        let err = serde_json::from_str::<RunConfigFile>(
            r#"{"extra": 1, "original_dir": "a", "coded_dir": "b",
                "seed": 0, "checkpoint_dir": "c"}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("extra"), "{}", err);

        let err = serde_json::from_str::<RunConfigFile>(r#"{"seed": 0}"#).unwrap_err();
        assert!(err.to_string().contains("model"), "{}", err);
    }
}
