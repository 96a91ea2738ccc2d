//! Seeded random streams.
//!
//! Every sampler in the crate draws from a ChaCha8 stream built here, so a
//! fixed seed gives bit-identical output on every platform.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Categorical distribution over `0..weights.len()`.
#[derive(Debug, Clone)]
pub struct Categorical {
    index: WeightedIndex<f64>,
}

impl Categorical {
    pub fn new(weights: &[f64]) -> Result<Self> {
        WeightedIndex::new(weights.iter().copied())
            .map(|index| Self { index })
            .map_err(|e| Error::Invalid(format!("categorical weights: {e}")))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}
