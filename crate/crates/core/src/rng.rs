//! Counter-based random streams.
//!
//! Every consumer derives its generator from a `(seed, stream)` pair so that
//! work items can be processed in any order (or in parallel) and still draw
//! identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Keeps e.g. the shuffle stream of epoch 3 distinct from the
/// sample stream of design 3 under the same user seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Sample = 1,
    Split = 2,
    Shuffle = 3,
    Dropout = 4,
    Init = 5,
    Subset = 6,
    Ood = 7,
}

/// Generator for stream `stream` within `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}
