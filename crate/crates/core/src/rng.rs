//! Seeded random streams.
//!
//! Every noise source draws from its own ChaCha8 stream keyed by the run
//! seed, so adding or removing one source never shifts another:
//!
//! | stream | source                              |
//! |--------|-------------------------------------|
//! | 0..=2  | thermal force on axis x, y, z       |
//! | 3..=5  | measurement noise of detector 1..3  |
//! | 6      | initial-state draw                  |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const THERMAL_STREAMS: [u64; 3] = [0, 1, 2];
pub const DETECTOR_STREAMS: [u64; 3] = [3, 4, 5];
pub const INITIAL_STATE_STREAM: u64 = 6;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixes a base seed with a tag (e.g. the bit pattern of a swept value) into
/// a new seed. SplitMix64 finalizer.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
