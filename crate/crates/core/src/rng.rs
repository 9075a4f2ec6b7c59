//! Seed derivation. Every random draw comes from a ChaCha stream keyed by
//! (seed, purpose) so that adding a draw in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_TB_SIZE: u64 = 1;
pub const STREAM_TX_BITS: u64 = 2;
pub const STREAM_CHANNEL: u64 = 3;
pub const STREAM_NOISE: u64 = 4;
pub const STREAM_INTERFERER: u64 = 0x100;
pub const STREAM_MASK: u64 = 0x200;
pub const STREAM_SCENARIO: u64 = 0x300;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; maps (seed, index) to a well-spread child seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
