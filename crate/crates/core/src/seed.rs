//! Counter-based seed derivation.
//!
//! Every random stream is a ChaCha8 generator keyed by a 64-bit seed and
//! selected by a 64-bit stream id. Child seeds are derived by hashing the
//! parent with a path of counters (SplitMix64 finalizer), so a replicate's
//! draws depend only on `(master seed, path)` and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the substream addressed by `path` under `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(master), |acc, &c| {
        mix64(acc ^ mix64(c.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    })
}

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
