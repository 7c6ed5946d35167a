//! Reproducible random substreams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose 256-bit seed is
//! the byte packing of the full key tuple:
//!
//! | bytes    | field                         |
//! |----------|-------------------------------|
//! | `0..8`   | master seed (u64, LE)         |
//! | `8`      | [`StreamContext`] tag         |
//! | `9`      | [`Purpose`] tag               |
//! | `10..12` | batch id (u16, LE)            |
//! | `12..16` | first index component (u32)   |
//! | `16..20` | second index component (u32)  |
//! | `20..28` | sample index (u64, LE)        |
//! | `28..32` | particle index (u32, LE)      |
//!
//! The packing is injective, so distinct keys never share a stream, and a
//! stream depends on nothing but its key: not on the number of particles, the
//! order of evaluation or the number of worker threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which consumer a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum StreamContext {
    Mc = 1,
    MlmcTime = 2,
    MlmcParticle = 3,
    MlmcJoint = 4,
    Mimc = 5,
    Rates = 6,
    Calibration = 7,
    Test = 255,
}

/// What the draws of one particle stream are used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    InitialState = 0,
    Parameter = 1,
    Wiener = 2,
}

/// Identifies the randomness bundle of one sample; particle streams hang off it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub master_seed: u64,
    pub context: StreamContext,
    pub batch: u16,
    pub index: (u32, u32),
    pub sample: u64,
}

impl SampleKey {
    pub fn new(master_seed: u64, context: StreamContext) -> Self {
        Self {
            master_seed,
            context,
            batch: 0,
            index: (0, 0),
            sample: 0,
        }
    }

    pub fn with_batch(mut self, batch: u16) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_index(mut self, l1: u32, l2: u32) -> Self {
        self.index = (l1, l2);
        self
    }

    pub fn with_sample(mut self, sample: u64) -> Self {
        self.sample = sample;
        self
    }

    pub fn seed_bytes(&self, particle: u32, purpose: Purpose) -> [u8; 32] {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8] = self.context as u8;
        seed[9] = purpose as u8;
        seed[10..12].copy_from_slice(&self.batch.to_le_bytes());
        seed[12..16].copy_from_slice(&self.index.0.to_le_bytes());
        seed[16..20].copy_from_slice(&self.index.1.to_le_bytes());
        seed[20..28].copy_from_slice(&self.sample.to_le_bytes());
        seed[28..32].copy_from_slice(&particle.to_le_bytes());
        seed
    }

    /// The generator for one particle and purpose.
    pub fn stream(&self, particle: u32, purpose: Purpose) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.seed_bytes(particle, purpose))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn distinct_fields_give_distinct_seeds() {
        let base = SampleKey::new(7, StreamContext::Mimc).with_index(1, 2).with_sample(3);
        let variants = [
            base.seed_bytes(0, Purpose::Wiener),
            base.seed_bytes(1, Purpose::Wiener),
            base.seed_bytes(0, Purpose::InitialState),
            base.with_sample(4).seed_bytes(0, Purpose::Wiener),
            base.with_index(2, 1).seed_bytes(0, Purpose::Wiener),
            base.with_batch(1).seed_bytes(0, Purpose::Wiener),
            SampleKey { context: StreamContext::Mc, ..base }.seed_bytes(0, Purpose::Wiener),
        ];
        for i in 0..variants.len() {
            for j in i + 1..variants.len() {
                assert_ne!(variants[i], variants[j]);
            }
        }
    }

    #[test]
    fn same_key_same_stream() {
        let key = SampleKey::new(99, StreamContext::Rates).with_sample(12);
        let mut r1 = key.stream(5, Purpose::Wiener);
        let mut r2 = key.stream(5, Purpose::Wiener);
        let a: Vec<u64> = (0..8).map(|_| r1.random()).collect();
        let b: Vec<u64> = (0..8).map(|_| r2.random()).collect();
        assert_eq!(a, b);
    }
}
