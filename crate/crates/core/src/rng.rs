//! Counter-based, splittable Gaussian noise streams.
//!
//! A stream is a ChaCha8 keystream: the key is derived from the master seed,
//! the replicate id selects the ChaCha stream and the counter is the 32-bit
//! word position inside it. `(seed, replicate_id, counter)` therefore pins
//! every variate, and replicates can be generated in any order on any
//! number of workers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct NoiseStream {
    seed: u64,
    replicate_id: u64,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, replicate_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate_id);
        Self { seed, replicate_id, rng }
    }

    /// Reopens a stream at an explicit word position.
    pub fn at_counter(seed: u64, replicate_id: u64, counter: u128) -> Self {
        let mut s = Self::new(seed, replicate_id);
        s.rng.set_word_pos(counter);
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replicate_id(&self) -> u64 {
        self.replicate_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Fills `out` with i.i.d. `N(0, sd²)` variates.
    #[inline]
    pub fn fill_normal(&mut self, sd: f64, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = sd * self.rng.sample::<f64, _>(StandardNormal);
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// SplitMix64 finalizer; used to derive sub-seeds from a master seed and
/// a sequence of labels.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(master, labels...)`.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(mix64(master), |acc, &l| mix64(acc ^ mix64(l)))
}

/// Stable 64-bit tag for a string label (FNV-1a).
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_coordinates_same_variates() {
        let mut a = NoiseStream::new(7, 3);
        let mut b = NoiseStream::new(7, 3);
        let xa: Vec<f64> = (0..100).map(|_| a.standard_normal()).collect();
        let xb: Vec<f64> = (0..100).map(|_| b.standard_normal()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn counter_reopens_stream() {
        let mut a = NoiseStream::new(11, 5);
        for _ in 0..37 {
            a.standard_normal();
        }
        let c = a.counter();
        let next: Vec<f64> = (0..10).map(|_| a.standard_normal()).collect();
        let mut b = NoiseStream::at_counter(11, 5, c);
        let again: Vec<f64> = (0..10).map(|_| b.standard_normal()).collect();
        assert_eq!(next, again);
    }

    #[test]
    fn replicates_differ() {
        let mut a = NoiseStream::new(7, 0);
        let mut b = NoiseStream::new(7, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn derived_seeds_are_label_sensitive() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_eq!(derive_seed(1, &[2, 3]), derive_seed(1, &[2, 3]));
        assert_ne!(label_hash("qv"), label_hash("ec"));
    }
}
