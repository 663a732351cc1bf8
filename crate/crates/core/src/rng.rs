//! Seeded counter-based generators.
//!
//! All randomness goes through ChaCha8 keyed by a run seed. Independent
//! consumers (a parameter tensor, a synthetic video, the epoch shuffler) use
//! distinct stream ids so their draws never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as Rng;

/// Stream ids below this value are reserved for parameter initialization.
pub const STREAM_SHUFFLE: u64 = 1 << 40;
pub const STREAM_CENTROIDS: u64 = 1 << 41;
pub const STREAM_VIDEO_BASE: u64 = 1 << 42;
pub const STREAM_SPLIT: u64 = 1 << 43;
pub const STREAM_PROBE: u64 = 1 << 44;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
