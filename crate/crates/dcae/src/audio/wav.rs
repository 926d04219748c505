//! Hand-rolled RIFF/WAV reader and writer. Reads mono 16 kHz PCM16 or
//! float32; always writes PCM16.

use std::path::Path;

use super::AudioError;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> AudioError {
    AudioError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn u16_at(b: &[u8], pos: usize) -> u16 {
    u16::from_le_bytes([b[pos], b[pos + 1]])
}

fn u32_at(b: &[u8], pos: usize) -> u32 {
    u32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]])
}

/// Read a mono 16 kHz WAV file. PCM16 samples map to [-1, 1) by dividing
/// by 32768; float32 samples must be finite and are clamped to [-1, 1].
pub fn read_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let bytes = std::fs::read(path).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(fmt_err(path, "missing RIFF header"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(fmt_err(path, "RIFF file is not WAVE"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(&bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fmt_err(path, "chunk extends past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fmt_err(path, "fmt chunk too small"));
                }
                fmt = Some((
                    u16_at(body, 0),
                    u16_at(body, 2),
                    u32_at(body, 4),
                    u16_at(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1); // chunks are word-aligned
    }

    let (tag, channels, rate, bits) = fmt.ok_or_else(|| fmt_err(path, "no fmt chunk"))?;
    let data = data.ok_or_else(|| fmt_err(path, "no data chunk"))?;
    if channels != 1 {
        return Err(AudioError::NotMono {
            path: path.display().to_string(),
            channels,
        });
    }
    if rate != 16000 {
        return Err(AudioError::BadSampleRate {
            path: path.display().to_string(),
            got: rate,
        });
    }

    let samples: Vec<f32> = match (tag, bits) {
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (3, 32) => {
            let v: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if v.iter().any(|s| !s.is_finite()) {
                return Err(AudioError::NonFinite {
                    path: path.display().to_string(),
                });
            }
            v.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect()
        }
        _ => {
            return Err(AudioError::UnsupportedCodec {
                path: path.display().to_string(),
                format: tag,
                bits,
            })
        }
    };
    Ok(AudioClip {
        samples,
        sample_rate: rate,
    })
}

/// Write mono PCM16. Samples are scaled by 32768, rounded half away from
/// zero, and clamped to the i16 range (so 1.0 saturates to 32767).
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), AudioError> {
    if clip.samples.iter().any(|s| !s.is_finite()) {
        return Err(AudioError::NonFinite {
            path: path.display().to_string(),
        });
    }
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &out).map_err(|e| AudioError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
