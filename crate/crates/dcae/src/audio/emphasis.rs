//! First-order pre/de-emphasis pair. State is carried in f64 so the
//! de-emphasis recursion inverts pre-emphasis to within f32 rounding.

pub const PREEMPHASIS_COEFF: f32 = 0.95;

/// y[0] = x[0]; y[n] = x[n] - c * x[n-1].
pub fn preemphasis(x: &[f32], coeff: f32) -> Vec<f32> {
    let c = coeff as f64;
    let mut prev = 0.0f64;
    x.iter()
        .map(|&v| {
            let y = v as f64 - c * prev;
            prev = v as f64;
            y as f32
        })
        .collect()
}

/// Inverse recursion: x[n] = y[n] + c * x[n-1].
pub fn deemphasis(y: &[f32], coeff: f32) -> Vec<f32> {
    let c = coeff as f64;
    let mut prev = 0.0f64;
    y.iter()
        .map(|&v| {
            let x = v as f64 + c * prev;
            prev = x;
            x as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_response_matches_hand_values() {
        let step = (1.0 - PREEMPHASIS_COEFF as f64) as f32; // 1 - 0.95
        let y = preemphasis(&[1.0, 1.0, 1.0], PREEMPHASIS_COEFF);
        assert_eq!(y, vec![1.0, step, step]);
        assert!((step - 0.05).abs() < 1e-6);
        // First sample passes through untouched.
        assert_eq!(preemphasis(&[0.5], PREEMPHASIS_COEFF)[0], 0.5);
    }

    #[test]
    fn deemphasis_inverts_preemphasis() {
        let x: Vec<f32> = (0..4000)
            .map(|i| (i as f32 * 0.1).sin() * 0.8 + (i as f32 * 0.013).cos() * 0.1)
            .collect();
        let back = deemphasis(&preemphasis(&x, PREEMPHASIS_COEFF), PREEMPHASIS_COEFF);
        assert_eq!(back.len(), x.len());
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn empty_input_stays_empty() {
        assert!(preemphasis(&[], PREEMPHASIS_COEFF).is_empty());
        assert!(deemphasis(&[], PREEMPHASIS_COEFF).is_empty());
    }
}
