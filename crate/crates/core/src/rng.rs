//! Seeded random streams.
//!
//! Every randomized operation takes an explicit `u64` seed. Parallel work is
//! split into fixed-size chunks and chunk `i` draws from substream `i` of the
//! seed, so results do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for the root stream of `seed`.
pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent substream `index` of `seed`.
pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Number of Monte-Carlo samples handled by one substream.
pub const CHUNK: usize = 1024;

/// Split `samples` into `(chunk_index, len)` pairs of at most [`CHUNK`] each.
pub fn chunks(samples: usize) -> Vec<(u64, usize)> {
    (0..samples.div_ceil(CHUNK))
        .map(|i| (i as u64, CHUNK.min(samples - i * CHUNK)))
        .collect()
}
