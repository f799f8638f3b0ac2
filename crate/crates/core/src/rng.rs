//! Seeded random streams. Every random draw in the crate comes from a
//! ChaCha8 generator keyed by a `u64` seed and a stream id, so one seed fixes
//! a whole encode/decode session.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_OUTER: u64 = 1;
pub const STREAM_PRECODE: u64 = 2;
pub const STREAM_PACKETS: u64 = 3;
pub const STREAM_SOURCE: u64 = 4;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
