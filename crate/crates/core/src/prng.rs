//! Deterministic counter-based pseudo-randomness.
//!
//! Every stochastic piece of the library (the probabilistic damping coin of
//! the BP engine and measurement-noise synthesis) draws from a stateless
//! keyed generator instead of a sequential RNG, so any draw is addressable
//! directly by its coordinates and identical inputs always reproduce
//! identical runs within this implementation.
//!
//! The generator is two rounds of the SplitMix64 finalizer over the key
//! triple `(seed, stream, counter)`:
//!
//! ```text
//! mix(seed, stream, counter) =
//!     f(f(seed ^ f(stream * GOLDEN)) ^ counter * GOLDEN)
//! ```
//!
//! where `f` is the SplitMix64 avalanche function
//! (`z ^= z>>30; z *= 0xBF58476D1CE4E5B9; z ^= z>>27; z *= 0x94D049BB133111EB; z ^= z>>31`)
//! and `GOLDEN = 0x9E3779B97F4A7C15`. Normal deviates come from Box-Muller on
//! two uniform draws at counters `2c` and `2c + 1`.
//!
//! Cross-implementation bit-exactness is not a goal; within-implementation
//! reproducibility is.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed 64-bit hash of a (seed, stream, counter) triple.
pub fn mix(seed: u64, stream: u64, counter: u64) -> u64 {
    let h = avalanche(seed ^ avalanche(stream.wrapping_mul(GOLDEN)));
    avalanche(h ^ counter.wrapping_mul(GOLDEN))
}

/// Fair coin keyed by (seed, slot, iteration): the damping coin of Eq.-12
/// style probabilistic damping, drawn once per directed message per sweep.
pub fn coin(seed: u64, slot: u64, iteration: u64) -> bool {
    mix(seed, slot, iteration) & 1 == 1
}

/// Uniform draw in (0, 1].
pub fn uniform01(seed: u64, stream: u64, counter: u64) -> f64 {
    // 53 high bits, shifted into (0, 1] so the logarithm below is finite.
    (((mix(seed, stream, counter) >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
}

/// Standard normal deviate via Box-Muller on counters (2c, 2c + 1).
pub fn standard_normal(seed: u64, stream: u64, counter: u64) -> f64 {
    let u1 = uniform01(seed, stream, 2 * counter);
    let u2 = uniform01(seed, stream, 2 * counter + 1);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible_and_keyed() {
        assert_eq!(mix(1, 2, 3), mix(1, 2, 3));
        assert_ne!(mix(1, 2, 3), mix(1, 2, 4));
        assert_ne!(mix(1, 2, 3), mix(2, 2, 3));
        assert_ne!(mix(1, 2, 3), mix(1, 3, 3));
    }

    #[test]
    fn coin_is_roughly_fair() {
        let heads: u64 = (0..100_000).filter(|&i| coin(42, 7, i)).count() as u64;
        assert!((heads as i64 - 50_000).abs() < 1_500, "heads = {heads}");
    }

    #[test]
    fn normal_moments() {
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let x = standard_normal(7, 0, i);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean = {mean}");
        assert!((var - 1.0).abs() < 0.02, "var = {var}");
    }
}
