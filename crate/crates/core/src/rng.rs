//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by
//! `(master_seed, stream_id)`. Trial `i` of a campaign uses stream `i`, so a
//! trial's randomness does not depend on which worker runs it or in what
//! order trials complete.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type handed to every sampler.
pub type StreamRng = ChaCha8Rng;

/// Stream reserved for campaign setup (key-set construction, bucket choice).
pub const SETUP_STREAM: u64 = u64::MAX;

/// Opens stream `stream_id` under `master_seed`.
pub fn stream(master_seed: u64, stream_id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id);
    rng
}
