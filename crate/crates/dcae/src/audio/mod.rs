//! Audio I/O and the data pipeline: WAV files, pre/de-emphasis, training
//! and inference windowing, the seedable spectral degrader, and paired
//! dataset assembly.

mod chunk;
mod dataset;
mod degrade;
mod emphasis;
mod wav;

pub use chunk::{assemble, chunk_inference, chunk_training_offsets, InferenceChunks};
pub use dataset::{epoch_batches, pair_dataset, Batch, ChunkRef, PairItem, PairedDataset};
pub use degrade::{degrade, DEGRADE_FRAME, DEGRADE_HOP};
pub use emphasis::{deemphasis, preemphasis, PREEMPHASIS_COEFF};
pub use wav::{read_wav, write_wav, AudioClip};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{path}: unsupported codec (format tag {format}, {bits} bits); PCM16 or float32 required")]
    UnsupportedCodec { path: String, format: u16, bits: u16 },
    #[error("{path}: sample rate {got} Hz, 16000 Hz required")]
    BadSampleRate { path: String, got: u32 },
    #[error("{path}: {channels} channels, mono required")]
    NotMono { path: String, channels: u16 },
    #[error("{path}: non-finite sample values")]
    NonFinite { path: String },
    #[error("bandwidth {got} Hz out of range: must be positive and below the {nyquist} Hz Nyquist")]
    Bandwidth { got: f64, nyquist: f64 },
    #[error("noise level {got} must be non-negative and finite")]
    NoiseLevel { got: f64 },
    #[error("cannot assemble windows: {0}")]
    Assemble(String),
    #[error("no usable (original, coded) pairs: {0}")]
    EmptyDataset(String),
}
