//! Seeded sampling shared by dev/test allocation and survey construction.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`, which is value-stable across platforms. Sampling without
//! replacement is a partial Fisher-Yates shuffle over `0..len` drawing with
//! `gen_range`, so a given `(len, n, seed)` always selects the same indices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Indices of `0..len` in seeded shuffled order; the first `n` entries are
/// a uniform sample without replacement.
pub fn shuffled_prefix(len: usize, n: usize, seed: u64) -> Vec<usize> {
    assert!(n <= len, "sample size {n} exceeds population {len}");
    let mut rng = seeded(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.gen_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

/// Sorted uniform sample of `n` distinct indices from `0..len`.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx = shuffled_prefix(len, n, seed);
    idx.sort_unstable();
    idx
}
