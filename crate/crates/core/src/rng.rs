//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Work that can be
//! split into independent units (per draw, per replicate) derives one
//! ChaCha stream per unit so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
