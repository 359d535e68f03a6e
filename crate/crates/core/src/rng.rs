//! Named, splittable random streams derived from a single 64-bit seed.
//!
//! Every consumer asks for a stream by name ("init", "noise", "mask",
//! "probe", ...). Streams are independent ChaCha generators keyed by the
//! seed and a hash of the name, so adding a new consumer never shifts the
//! numbers drawn by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: &str = "init";
pub const STREAM_NOISE: &str = "noise";
pub const STREAM_MASK: &str = "mask";
pub const STREAM_PROBE: &str = "probe";

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        self.indexed(name, 0)
    }

    /// Sub-stream `index` of the named stream, e.g. one per image in a suite.
    pub fn indexed(&self, name: &str, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name.as_bytes()) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
