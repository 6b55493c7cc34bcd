//! Named random streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent sub-streams so that, for example, changing the batch order
/// does not perturb the generated data or the initial weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Datagen = 1,
    Init = 2,
    Batching = 3,
    Augmentation = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
