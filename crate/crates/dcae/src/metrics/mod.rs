//! Objective quality and throughput metrics: segmental SNR, log-spectral
//! distance, and the real-time factor, plus the per-file report record.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

pub const SNR_FRAME: usize = 512;
pub const SNR_HOP: usize = 256;
pub const SNR_CEIL_DB: f64 = 35.0;
pub const SNR_FLOOR_DB: f64 = -10.0;
/// Frames with reference energy below this are treated as silence.
pub const SNR_SILENCE: f64 = 1e-10;

pub const LSD_FFT: usize = 1024;
pub const LSD_HOP: usize = 512;
/// Magnitudes are floored here before the log.
pub const LSD_MAG_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: reference {ref_len} vs degraded {deg_len} samples")]
    LengthMismatch { ref_len: usize, deg_len: usize },
    #[error("clip too short for analysis: {len} samples, at least {needed} required")]
    TooShort { len: usize, needed: usize },
    #[error("no frames above the silence threshold")]
    AllSilent,
    #[error("{what} must be positive, got {got}")]
    NonPositive { what: &'static str, got: f64 },
}

/// Mean over voiced frames of the per-frame SNR
/// 10*log10(|ref|^2 / |ref - deg|^2), each frame clamped to [-10, 35] dB.
/// Frames whose reference energy falls below `SNR_SILENCE` are skipped.
pub fn segmental_snr(reference: &[f32], degraded: &[f32]) -> Result<f64, MetricsError> {
    if reference.len() != degraded.len() {
        return Err(MetricsError::LengthMismatch {
            ref_len: reference.len(),
            deg_len: degraded.len(),
        });
    }
    if reference.len() < SNR_FRAME {
        return Err(MetricsError::TooShort {
            len: reference.len(),
            needed: SNR_FRAME,
        });
    }
    let mut sum = 0.0f64;
    let mut frames = 0usize;
    let mut off = 0;
    while off + SNR_FRAME <= reference.len() {
        let mut e_ref = 0.0f64;
        let mut e_err = 0.0f64;
        for i in off..off + SNR_FRAME {
            let r = reference[i] as f64;
            let d = degraded[i] as f64;
            e_ref += r * r;
            e_err += (r - d) * (r - d);
        }
        if e_ref >= SNR_SILENCE {
            let snr = if e_err == 0.0 {
                SNR_CEIL_DB
            } else {
                (10.0 * (e_ref / e_err).log10()).clamp(SNR_FLOOR_DB, SNR_CEIL_DB)
            };
            sum += snr;
            frames += 1;
        }
        off += SNR_HOP;
    }
    if frames == 0 {
        return Err(MetricsError::AllSilent);
    }
    Ok(sum / frames as f64)
}

/// Hann-windowed magnitude spectra, one row per frame, LSD_FFT/2 + 1 bins.
pub fn magnitude_frames(x: &[f32]) -> Vec<Vec<f64>> {
    let n = LSD_FFT;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut out = Vec::new();
    let mut off = 0;
    while off + n <= x.len() {
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| Complex::new(x[off + i] as f64 * window[i], 0.0))
            .collect();
        fft.process(&mut buf);
        out.push(buf[..n / 2 + 1].iter().map(|c| c.norm()).collect());
        off += LSD_HOP;
    }
    out
}

/// RMS over frames of the per-frame RMS-over-bins difference of
/// 20*log10 magnitude spectra (magnitudes floored at `LSD_MAG_FLOOR`).
pub fn log_spectral_distance(reference: &[f32], degraded: &[f32]) -> Result<f64, MetricsError> {
    if reference.len() != degraded.len() {
        return Err(MetricsError::LengthMismatch {
            ref_len: reference.len(),
            deg_len: degraded.len(),
        });
    }
    if reference.len() < LSD_FFT {
        return Err(MetricsError::TooShort {
            len: reference.len(),
            needed: LSD_FFT,
        });
    }
    let ref_frames = magnitude_frames(reference);
    let deg_frames = magnitude_frames(degraded);
    let mut acc = 0.0f64;
    for (rf, df) in ref_frames.iter().zip(&deg_frames) {
        let mut bin_acc = 0.0f64;
        for (r, d) in rf.iter().zip(df) {
            let lr = 20.0 * r.max(LSD_MAG_FLOOR).log10();
            let ld = 20.0 * d.max(LSD_MAG_FLOOR).log10();
            bin_acc += (lr - ld) * (lr - ld);
        }
        acc += bin_acc / rf.len() as f64; // mean over bins, still squared
    }
    Ok((acc / ref_frames.len() as f64).sqrt())
}

/// Real-time factor: seconds of audio processed per second of wall clock.
pub fn rtf(audio_seconds: f64, wall_seconds: f64) -> Result<f64, MetricsError> {
    if !(audio_seconds > 0.0) {
        return Err(MetricsError::NonPositive {
            what: "audio duration",
            got: audio_seconds,
        });
    }
    if !(wall_seconds > 0.0) {
        return Err(MetricsError::NonPositive {
            what: "wall-clock time",
            got: wall_seconds,
        });
    }
    Ok(audio_seconds / wall_seconds)
}

/// One evaluated file.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub file: String,
    pub samples: usize,
    pub seg_snr_db: f64,
    pub lsd_db: f64,
    pub rtf: f64,
}

impl EvalReport {
    pub fn tsv_header() -> &'static str {
        "file\tsamples\tseg_snr_db\tlsd_db\trtf"
    }

    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{:.3}\t{:.3}\t{:.3}",
            self.file, self.samples, self.seg_snr_db, self.lsd_db, self.rtf
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_signal(len: usize, seed: u64, amp: f64) -> Vec<f32> {
        let mut s = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
                (((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 2.0 * amp) as f32
            })
            .collect()
    }

    #[test]
    fn identical_signals_hit_the_snr_ceiling() {
        let x = lcg_signal(4000, 1, 0.4);
        assert_eq!(segmental_snr(&x, &x).unwrap(), SNR_CEIL_DB);
    }

    #[test]
    fn white_noise_at_minus_20_db_reads_near_20() {
        let x = lcg_signal(16000, 2, 0.4);
        // Uniform noise with a tenth of the signal's RMS: -20 dB.
        let noise = lcg_signal(16000, 3, 0.04);
        let deg: Vec<f32> = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let snr = segmental_snr(&x, &deg).unwrap();
        assert!((snr - 20.0).abs() < 1.0, "snr {}", snr);
    }

    #[test]
    fn polarity_flip_follows_the_formula_not_the_floor() {
        // ref vs -ref gives an error signal of twice the reference:
        // 10*log10(1/4) = -6.02 dB, well above the -10 dB clamp.
        let x = lcg_signal(4000, 4, 0.4);
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        let snr = segmental_snr(&x, &neg).unwrap();
        assert!((snr - 10.0 * 0.25f64.log10()).abs() < 1e-9, "snr {}", snr);
    }

    #[test]
    fn overwhelming_noise_clamps_to_the_floor() {
        let x = lcg_signal(4000, 5, 0.01);
        let loud = lcg_signal(4000, 6, 0.9);
        let deg: Vec<f32> = x.iter().zip(&loud).map(|(a, b)| a + b).collect();
        assert_eq!(segmental_snr(&x, &deg).unwrap(), SNR_FLOOR_DB);
    }

    #[test]
    fn silence_is_skipped_and_all_silence_is_an_error() {
        let mut x = vec![0.0f32; 4000];
        let mut deg = vec![0.0f32; 4000];
        // Only the tail carries signal; leading silent frames are skipped.
        for i in 2000..4000 {
            x[i] = ((i as f32) * 0.1).sin() * 0.5;
            deg[i] = x[i];
        }
        assert_eq!(segmental_snr(&x, &deg).unwrap(), SNR_CEIL_DB);
        let all_zero = vec![0.0f32; 4000];
        assert!(matches!(
            segmental_snr(&all_zero, &all_zero),
            Err(MetricsError::AllSilent)
        ));
    }

    #[test]
    fn snr_rejects_length_mismatch_and_short_input() {
        assert!(matches!(
            segmental_snr(&[0.0; 600], &[0.0; 601]),
            Err(MetricsError::LengthMismatch { ref_len: 600, deg_len: 601 })
        ));
        assert!(matches!(
            segmental_snr(&[0.0; 100], &[0.0; 100]),
            Err(MetricsError::TooShort { needed: 512, .. })
        ));
    }

    #[test]
    fn snr_worsens_monotonically_with_noise() {
        let x = lcg_signal(8000, 7, 0.4);
        let mut prev = f64::INFINITY;
        for (i, amp) in [0.01, 0.05, 0.25].iter().enumerate() {
            let noise = lcg_signal(8000, 8, *amp);
            let deg: Vec<f32> = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let snr = segmental_snr(&x, &deg).unwrap();
            assert!(snr < prev, "level {} did not worsen", i);
            prev = snr;
        }
    }

    #[test]
    fn lsd_is_zero_for_identical_and_symmetric() {
        let x = lcg_signal(5000, 9, 0.4);
        assert_eq!(log_spectral_distance(&x, &x).unwrap(), 0.0);
        let y = lcg_signal(5000, 10, 0.4);
        let ab = log_spectral_distance(&x, &y).unwrap();
        let ba = log_spectral_distance(&y, &x).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }

    #[test]
    fn doubling_amplitude_gives_six_db() {
        let x = lcg_signal(5000, 11, 0.3);
        let twice: Vec<f32> = x.iter().map(|v| v * 2.0).collect();
        let lsd = log_spectral_distance(&x, &twice).unwrap();
        let expect = 20.0 * 2.0f64.log10();
        assert!((lsd - expect).abs() < 1e-6, "{} vs {}", lsd, expect);
    }

    #[test]
    fn lsd_worsens_monotonically_with_noise() {
        let x = lcg_signal(8000, 12, 0.4);
        let mut prev = 0.0;
        for amp in [0.01, 0.05, 0.25] {
            let noise = lcg_signal(8000, 13, amp);
            let deg: Vec<f32> = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
            let lsd = log_spectral_distance(&x, &deg).unwrap();
            assert!(lsd > prev);
            prev = lsd;
        }
    }

    #[test]
    fn spectrogram_dimensions_follow_the_frame_rule() {
        let x = lcg_signal(4096, 14, 0.4);
        let frames = magnitude_frames(&x);
        assert_eq!(frames.len(), (4096 - LSD_FFT) / LSD_HOP + 1);
        assert!(frames.iter().all(|f| f.len() == LSD_FFT / 2 + 1));
    }

    #[test]
    fn rtf_arithmetic_and_rejections() {
        assert_eq!(rtf(10.0, 2.0).unwrap(), 5.0);
        assert_eq!(rtf(7.0, 1.0).unwrap(), 7.0);
        assert_eq!(rtf(1.0, 1.0).unwrap(), 1.0);
        assert!(matches!(rtf(1.0, 0.0), Err(MetricsError::NonPositive { .. })));
        assert!(matches!(rtf(0.0, 1.0), Err(MetricsError::NonPositive { .. })));
    }

    #[test]
    fn report_tsv_has_five_columns() {
        let r = EvalReport {
            file: "x.wav".into(),
            samples: 16000,
            seg_snr_db: 12.345,
            lsd_db: 1.5,
            rtf: 3.25,
        };
        assert_eq!(r.tsv_line().split('\t').count(), 5);
        assert_eq!(EvalReport::tsv_header().split('\t').count(), 5);
        assert!(serde_json::to_string(&r).unwrap().contains("\"seg_snr_db\":12.345"));
    }
}
