//! Splittable seeds.
//!
//! Every program execution draws from its own stream, derived from a master
//! seed and an index path, so results do not depend on evaluation order or
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used by program executions.
pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Seed {
    /// Child seed for sub-computation `index`.
    pub fn derive(self, index: u64) -> Seed {
        let mixed = splitmix64(self.0 ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)));
        Seed(mixed)
    }

    pub fn stream(self) -> Stream {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
