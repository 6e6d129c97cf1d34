//! Small numeric helpers shared across modules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Pairwise (cascade) summation. Reduction error grows as O(log n) instead of
/// O(n), which keeps loss values independent of chunking to well below 1e-10.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Index of the maximum value; ties break toward the smaller index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Derive an independent RNG stream from a base seed. Used so that per-sample
/// and per-iteration randomness does not depend on execution order.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_inputs() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64) * 0.1).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-10);
    }

    #[test]
    fn pairwise_is_chunking_independent() {
        let v: Vec<f64> = (0..10_000)
            .map(|i| ((i * 2654435761_usize) % 1000) as f64 * 1e-3 - 0.5)
            .collect();
        let whole = pairwise_sum(&v);
        let halves = pairwise_sum(&v[..5000]) + pairwise_sum(&v[5000..]);
        assert!((whole - halves).abs() < 1e-10);
    }

    #[test]
    fn argmax_ties_break_low() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }

    #[test]
    fn derived_streams_differ() {
        use rand::RngCore;
        let mut a = derive_rng(7, 0);
        let mut b = derive_rng(7, 1);
        let mut a2 = derive_rng(7, 0);
        assert_ne!(a.next_u64(), b.next_u64());
        let mut a = derive_rng(7, 0);
        assert_eq!(a.next_u64(), a2.next_u64());
    }
}
