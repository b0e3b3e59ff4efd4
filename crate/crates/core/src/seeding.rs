//! Per-replicate random streams.
//!
//! Every stochastic routine takes a base seed; replicate `r` draws from
//! stream `r` of a ChaCha8 generator keyed by that seed, so results do not
//! depend on how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
