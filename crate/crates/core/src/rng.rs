//! Counter-based random streams.
//!
//! Every random quantity in a run is drawn from a stream addressed by the
//! master seed plus a short path of indices (increment, component, sample,
//! purpose, ...). The path is hashed with SplitMix64 into a ChaCha8 key, so a
//! stream's contents depend only on its address and never on the order in
//! which streams are created or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes under the same indices give
/// independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Ancestral = 1,
    Poisson = 2,
    Bridge = 3,
    Simulation = 4,
    Bootstrap = 5,
    Multistart = 6,
    Selftest = 7,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Factory for addressable streams under one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Streams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream addressed by `purpose` and an index path.
    pub fn stream(&self, purpose: Purpose, path: &[u64]) -> StreamRng {
        let mut h = splitmix64(self.master ^ 0x5851_f42d_4c95_7f2d);
        h = splitmix64(h ^ (purpose as u64));
        for (depth, &idx) in path.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(idx.wrapping_add((depth as u64 + 1) << 56)));
        }
        let mut key = [0u8; 32];
        let mut s = h;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}
