//! Coded-audio enhancement with a conditional least-squares GAN over raw
//! waveforms, built on a small in-crate autodiff tape.
//!
//! - [`tensor`]: reverse-mode autodiff over flat f32/f64 buffers
//! - [`model`]: generator/discriminator definitions, shape planning,
//!   parameter stores, checkpoints
//! - [`audio`]: WAV I/O, emphasis filters, windowing, the synthetic
//!   degrader, paired datasets
//! - [`train`]: GAN losses, RMSprop updates, the epoch loop
//! - [`metrics`]: segmental SNR, log-spectral distance, real-time factor
//! - [`cli`]: the `dcae` command-line entry point

pub mod audio;
pub mod cli;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    cli::run()
}
