//! Seed derivation.
//!
//! One master seed fans out into independent ChaCha streams, one per purpose
//! (and per device where a purpose is device-local), so that changing how many
//! draws one subsystem makes never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Data = 1,
    Partition = 2,
    Geometry = 3,
    Channels = 4,
    Noise = 5,
    Batching = 6,
    Init = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, purpose: Purpose) -> ChaCha8Rng {
        self.substream(purpose, 0)
    }

    pub fn substream(&self, purpose: Purpose, index: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(((purpose as u64) << 32) | u64::from(index));
        rng
    }
}
