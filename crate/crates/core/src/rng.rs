//! Seeded, splittable randomness.
//!
//! Every run owns a single `u64` seed. Independent consumers (weight
//! initialization, training batches, the validation batch, GA operators,
//! oracle chunks, ...) each derive their own ChaCha substream from
//! `(seed, stream id)`, so batches are reproducible and parallel lanes
//! never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream-id allocation for a run seed. Parallel code derives one
/// substream per lane starting from the `*_BASE` offsets.
pub mod stream {
    pub const WEIGHT_INIT: u64 = 1;
    pub const TRAIN_PATHS: u64 = 2;
    pub const VALID_PATHS: u64 = 3;
    pub const GA_OPS: u64 = 4;
    pub const FITNESS_PATHS: u64 = 5;
    /// One stream per oracle sample chunk: `ORACLE_BASE + chunk`.
    pub const ORACLE_BASE: u64 = 1 << 32;
    /// One stream per landscape (guess, run) cell: `SWEEP_BASE + 2 * cell`.
    pub const SWEEP_BASE: u64 = 1 << 33;
}

/// Derives the generator for stream `id` of the given run seed.
pub fn substream(seed: u64, id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
