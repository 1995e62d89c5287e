//! Deterministic, splittable random streams.
//!
//! All randomness in a run flows from a single 64-bit seed. A stream can be
//! split into independent child streams by index; the (seed, split path)
//! pair fully determines the draw sequence, so simulations are reproducible
//! regardless of scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RandomStream {
    key: [u8; 32],
    rng: ChaCha12Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> RandomStream {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        RandomStream {
            key,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// Derives the `index`-th child stream. Children of the same parent are
    /// pairwise independent and never share draws with the parent.
    pub fn child(&self, index: u64) -> RandomStream {
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update(index.to_le_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RandomStream {
            key,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.gen();
            if u > 0.0 && u < 1.0 {
                return u;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Exponential draw with the given mean (zero mean gives zero).
    pub fn exponential(&mut self, mean: f64) -> f64 {
        if mean == 0.0 {
            return 0.0;
        }
        -mean * self.uniform().ln()
    }

    /// Index draw from unnormalized cumulative weights (last entry = total).
    pub fn categorical_cumulative(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("empty categorical");
        let u = self.uniform() * total;
        match cumulative.binary_search_by(|w| w.total_cmp(&u)) {
            Ok(i) => (i + 1).min(cumulative.len() - 1),
            Err(i) => i.min(cumulative.len() - 1),
        }
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}
