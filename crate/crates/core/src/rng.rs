//! Seeded random streams.
//!
//! Every consumer of randomness inside one cell gets its own ChaCha stream
//! derived from the cell seed, so that e.g. generating a pseudoset never
//! shifts the exploration sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Env = 1,
    Policy = 2,
    Pseudo = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
