//! Training and inference windowing.

use super::AudioError;

/// Start offsets of the overlapping training windows: 0, hop, 2*hop, ...
/// while a full window fits. The trailing remainder is dropped.
pub fn chunk_training_offsets(len: usize, window: usize, hop: usize) -> Vec<usize> {
    assert!(window > 0 && hop > 0, "window and hop must be positive");
    let mut offsets = Vec::new();
    let mut off = 0;
    while off + window <= len {
        offsets.push(off);
        off += hop;
    }
    offsets
}

/// Non-overlapping inference windows with the final partial window
/// zero-padded; `original_len` is kept for exact truncation on assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceChunks {
    pub windows: Vec<Vec<f32>>,
    pub window: usize,
    pub original_len: usize,
}

pub fn chunk_inference(x: &[f32], window: usize) -> InferenceChunks {
    assert!(window > 0, "window must be positive");
    let mut windows = Vec::with_capacity(x.len().div_ceil(window));
    let mut off = 0;
    while off < x.len() {
        let end = (off + window).min(x.len());
        let mut w = vec![0.0f32; window];
        w[..end - off].copy_from_slice(&x[off..end]);
        windows.push(w);
        off += window;
    }
    InferenceChunks {
        windows,
        window,
        original_len: x.len(),
    }
}

/// Concatenate equal-length windows and truncate to `original_len`.
pub fn assemble(
    windows: &[Vec<f32>],
    window: usize,
    original_len: usize,
) -> Result<Vec<f32>, AudioError> {
    for (i, w) in windows.iter().enumerate() {
        if w.len() != window {
            return Err(AudioError::Assemble(format!(
                "window {} has {} samples, expected {}",
                i,
                w.len(),
                window
            )));
        }
    }
    let needed = original_len.div_ceil(window);
    if windows.len() != needed {
        return Err(AudioError::Assemble(format!(
            "{} windows cannot reconstruct {} samples ({} windows of {} required)",
            windows.len(),
            original_len,
            needed,
            window
        )));
    }
    let mut out: Vec<f32> = Vec::with_capacity(windows.len() * window);
    for w in windows {
        out.extend_from_slice(w);
    }
    out.truncate(original_len);
    Ok(out)
}
