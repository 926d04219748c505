//! Seedable spectral degrader that manufactures "coded" counterparts for
//! training pairs: a brick-wall bandwidth cut plus per-band noise whose
//! level follows the local spectrum, applied frame-by-frame with a
//! sine-windowed 50%-overlap analysis/synthesis pair (the squared sine
//! windows sum to exactly 1, so noise_level 0 plus a full passband is an
//! identity up to FFT rounding).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioClip, AudioError};

pub const DEGRADE_FRAME: usize = 2048;
pub const DEGRADE_HOP: usize = 1024;
/// Noise is shaped per band of this many bins.
const BAND_BINS: usize = 64;

pub fn degrade(
    clip: &AudioClip,
    bandwidth_hz: f64,
    noise_level: f64,
    seed: u64,
) -> Result<AudioClip, AudioError> {
    let nyquist = clip.sample_rate as f64 / 2.0;
    if !(bandwidth_hz > 0.0 && bandwidth_hz < nyquist) {
        return Err(AudioError::Bandwidth {
            got: bandwidth_hz,
            nyquist,
        });
    }
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(AudioError::NoiseLevel { got: noise_level });
    }
    let len = clip.samples.len();
    if len == 0 {
        return Ok(AudioClip {
            samples: Vec::new(),
            sample_rate: clip.sample_rate,
        });
    }

    let n = DEGRADE_FRAME;
    let hop = DEGRADE_HOP;
    let window: Vec<f64> = (0..n)
        .map(|i| (PI * (i as f64 + 0.5) / n as f64).sin())
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Highest retained bin; everything above (through Nyquist) is zeroed.
    let cutoff_bin = (bandwidth_hz * n as f64 / clip.sample_rate as f64).floor() as usize;

    // The signal is front-padded with `hop` zeros so the first real sample
    // already sees two windows; `out` indexes the padded timeline.
    let mut out = vec![0.0f64; hop + len + n];
    let mut buf = vec![Complex::new(0.0f64, 0.0); n];
    let mut offset = 0;
    while offset < hop + len {
        for (i, b) in buf.iter_mut().enumerate() {
            let p = offset + i;
            let s = if p >= hop && p - hop < len {
                clip.samples[p - hop] as f64
            } else {
                0.0
            };
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);

        for k in (cutoff_bin + 1)..=(n / 2) {
            buf[k] = Complex::new(0.0, 0.0);
        }
        if noise_level > 0.0 {
            // Bands of 64 bins starting at bin 1 (DC and Nyquist excluded);
            // each retained bin gets complex noise at noise_level x the
            // band's RMS magnitude. Draws happen for every retained bin in
            // a fixed order, so the stream depends only on the seed and
            // the frame count.
            let mut band_start = 1;
            while band_start <= cutoff_bin {
                let band_end = (band_start + BAND_BINS - 1).min(cutoff_bin);
                let bins = band_start..=band_end;
                let count = band_end - band_start + 1;
                let power: f64 = bins.clone().map(|k| buf[k].norm_sqr()).sum();
                let rms = (power / count as f64).sqrt();
                let scale = noise_level * rms / std::f64::consts::SQRT_2;
                for k in bins {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    buf[k] += Complex::new(re * scale, im * scale);
                }
                band_start = band_end + 1;
            }
        }
        // Restore Hermitian symmetry so the frame stays real.
        for k in 1..n / 2 {
            buf[n - k] = buf[k].conj();
        }

        ifft.process(&mut buf);
        for i in 0..n {
            out[offset + i] += buf[i].re / n as f64 * window[i];
        }
        offset += hop;
    }

    let samples = out[hop..hop + len]
        .iter()
        .map(|&v| v.clamp(-1.0, 1.0) as f32)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, len: usize, amp: f32) -> AudioClip {
        let samples = (0..len)
            .map(|i| (2.0 * PI * freq * i as f64 / 16000.0).sin() as f32 * amp)
            .collect();
        AudioClip {
            samples,
            sample_rate: 16000,
        }
    }

    #[test]
    fn noiseless_full_band_is_near_identity() {
        // 1 kHz tone, bandwidth just below Nyquist: the overlap-add pair
        // reconstructs the input to FFT rounding. The tone gets smooth
        // fade edges so it carries no energy near Nyquist; an abrupt
        // onset does, and the filter (correctly) removes that.
        let mut x = tone(1000.0, 6000, 0.5);
        let ramp = 512;
        let n = x.samples.len();
        for i in 0..ramp {
            let g = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos() as f32;
            x.samples[i] *= g;
            x.samples[n - 1 - i] *= g;
        }
        let y = degrade(&x, 7999.0, 0.0, 0).unwrap();
        assert_eq!(y.samples.len(), x.samples.len());
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x = tone(440.0, 5000, 0.4);
        let a = degrade(&x, 7200.0, 0.3, 7).unwrap();
        let b = degrade(&x, 7200.0, 0.3, 7).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = degrade(&x, 7200.0, 0.3, 8).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn energy_above_cutoff_is_suppressed() {
        // Broadband input; after a 4 kHz cut, energy above 4.5 kHz (guard
        // band for the window's own spreading) must sit below -60 dB of
        // the total.
        let mut state = 0x12345678u64;
        let mut next = || {
            // xorshift, plenty random for a spectrum occupancy test
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let x = AudioClip {
            samples: (0..32768).map(|_| next() as f32).collect(),
            sample_rate: 16000,
        };
        let y = degrade(&x, 4000.0, 0.0, 0).unwrap();

        // Hann-windowed DFT occupancy measurement.
        let n = 16384;
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                Complex::new(y.samples[i + 4096] as f64 * w, 0.0)
            })
            .collect();
        fft.process(&mut buf);
        let bin_hz = 16000.0 / n as f64;
        let mut total = 0.0;
        let mut above = 0.0;
        for (k, v) in buf.iter().enumerate().take(n / 2) {
            let e = v.norm_sqr();
            total += e;
            if k as f64 * bin_hz > 4500.0 {
                above += e;
            }
        }
        assert!(above / total < 1e-6, "leakage ratio {}", above / total);
    }

    #[test]
    fn noise_raises_error_floor_monotonically() {
        let x = tone(800.0, 8000, 0.5);
        let mut prev = 0.0;
        for (i, nl) in [0.05, 0.2, 0.8].iter().enumerate() {
            let y = degrade(&x, 7200.0, *nl, 3).unwrap();
            let err: f64 = x
                .samples
                .iter()
                .zip(&y.samples)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum();
            assert!(err > prev, "level {} did not increase error", i);
            prev = err;
        }
    }

    #[test]
    fn output_length_matches_input_for_odd_lengths() {
        for len in [1usize, 100, 1023, 1024, 1025, 2048, 5000] {
            let x = tone(500.0, len, 0.3);
            let y = degrade(&x, 7200.0, 0.1, 1).unwrap();
            assert_eq!(y.samples.len(), len);
        }
        let empty = AudioClip {
            samples: vec![],
            sample_rate: 16000,
        };
        assert!(degrade(&empty, 7200.0, 0.1, 1).unwrap().samples.is_empty());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let x = tone(500.0, 100, 0.3);
        assert!(matches!(
            degrade(&x, 8000.0, 0.0, 0),
            Err(AudioError::Bandwidth { .. })
        ));
        assert!(matches!(
            degrade(&x, 0.0, 0.0, 0),
            Err(AudioError::Bandwidth { .. })
        ));
        assert!(matches!(
            degrade(&x, 7200.0, -0.1, 0),
            Err(AudioError::NoiseLevel { .. })
        ));
    }
}
