//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by a 64-bit
//! seed and a 64-bit stream id, so work split across samples, characters or
//! replicates reproduces the sequential result exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as Stream;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a labelled purpose, e.g. `derive(seed, ITERATION ^ t)`.
#[inline]
pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Purpose tags mixed into derived seeds.
pub mod tag {
    pub const INIT: u64 = 0x1001;
    pub const ITERATION: u64 = 0x2002 << 32;
    pub const TRACE: u64 = 0x3003 << 32;
    pub const CALIBRATION: u64 = 0x4004;
    pub const DRAWS: u64 = 0x5005;
    pub const SIMULATION: u64 = 0x6006;
    pub const CORRUPTION: u64 = 0x7007;
    pub const RELABEL: u64 = 0x8008;
}
