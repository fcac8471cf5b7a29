//! Temperature-scaled softmax and the seeded categorical sampler the mock
//! backends draw from, so temperature has a faithful, testable effect even
//! offline.

use super::rng::SplitMix64;
use super::ClientError;

/// P(i) = exp(z_i / temp) / sum_j exp(z_j / temp), computed with the usual
/// max-subtraction for numerical stability.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Result<Vec<f64>, ClientError> {
    if logits.is_empty() {
        return Err(ClientError::invalid_input("logits must be non-empty"));
    }
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(ClientError::invalid_input(format!(
            "temperature must be a positive finite number, got {temperature}"
        )));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(ClientError::invalid_input("logits must be finite"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Draw one index from the temperature-scaled distribution using a seeded
/// generator. Same (logits, temperature, seed) always yields the same index.
pub fn mock_sample(logits: &[f64], temperature: f64, seed: u64) -> Result<usize, ClientError> {
    let probs = softmax_with_temperature(logits, temperature)?;
    let u = SplitMix64::new(seed).next_f64();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return Ok(i);
        }
    }
    // floating-point residue: the tail index absorbs it
    Ok(probs.len() - 1)
}

/// Shannon entropy in nats; 0·ln 0 taken as 0.
pub fn shannon_entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let p = softmax_with_temperature(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for q in &p {
            assert!((q - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ln2_logit_gives_two_thirds() {
        let p = softmax_with_temperature(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn low_temperature_sharpens() {
        // P(0) = e^4 / (e^4 + 1) for logits [1, 0] at T = 0.25
        let p = softmax_with_temperature(&[1.0, 0.0], 0.25).unwrap();
        let expected = 4f64.exp() / (4f64.exp() + 1.0);
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((expected - 0.98201).abs() < 5e-6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(softmax_with_temperature(&[], 1.0).is_err());
        assert!(softmax_with_temperature(&[0.0], 0.0).is_err());
        assert!(softmax_with_temperature(&[0.0], -1.0).is_err());
        assert!(softmax_with_temperature(&[f64::NAN], 1.0).is_err());
        assert!(mock_sample(&[], 1.0, 0).is_err());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = mock_sample(&[0.3, 0.2, 0.1], 0.7, 99).unwrap();
        let b = mock_sample(&[0.3, 0.2, 0.1], 0.7, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_sampling_chi_squared() {
        // logits [0,0,0] at T=1: each index expected 1/3 of 10,000 draws.
        let mut counts = [0u32; 3];
        for seed in 0..10_000u64 {
            counts[mock_sample(&[0.0, 0.0, 0.0], 1.0, seed).unwrap()] += 1;
        }
        let expected = 10_000.0 / 3.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = f64::from(c) - expected;
                d * d / expected
            })
            .sum();
        // df = 2, alpha = 0.001 critical value
        assert!(chi2 < 13.816, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn two_thirds_sampling_frequency() {
        let mut zero = 0u32;
        for seed in 0..10_000u64 {
            if mock_sample(&[2f64.ln(), 0.0], 1.0, seed).unwrap() == 0 {
                zero += 1;
            }
        }
        let freq = f64::from(zero) / 10_000.0;
        assert!((freq - 2.0 / 3.0).abs() < 0.02, "freq = {freq}");
    }

    #[test]
    fn entropy_nondecreasing_in_temperature() {
        let logits = [2.0, 0.5, -1.0, 0.0];
        let temps = [0.1, 0.25, 0.5, 1.0, 2.0];
        let mut last = -1.0;
        for t in temps {
            let h = shannon_entropy(&softmax_with_temperature(&logits, t).unwrap());
            assert!(h >= last - 1e-12, "entropy decreased at T={t}");
            last = h;
        }
    }
}
