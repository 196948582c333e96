//! Named random streams derived from one master seed.
//!
//! Each component draws from its own ChaCha stream (same key, different
//! stream id), so enabling or disabling one component never shifts the
//! randomness seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Env = 1,
    PolicySampling = 2,
    Augmentation = 3,
    Init = 4,
    Action = 5,
    Modeled = 6,
    Minibatch = 7,
    Probe = 8,
    Eval = 9,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Independent generator for a single episode or sub-task.
pub fn derived(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
