//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator
//! (`rand_chacha::ChaCha8Rng`). A stream is identified by a 64-bit seed and a
//! 64-bit stream id: the key is expanded from the seed with
//! `SeedableRng::seed_from_u64` and the stream id is installed with
//! `ChaCha8Rng::set_stream`. ChaCha is counter based, so two streams with the
//! same seed and different ids never overlap, and a stream can be recreated
//! from its coordinates alone. This makes per-sample noise independent of
//! processing order.
//!
//! Stream ids used by the training code are built from a purpose tag in the
//! upper 32 bits and an index (layer, sample) in the lower 32 bits.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Purpose tags for the upper half of a stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Purpose {
    /// Per-sample noise synthesis; index = sample index.
    Noise = 0,
    /// RBM weight initialisation; index = layer.
    RbmInit = 1,
    /// Gibbs sampling during contrastive divergence; index = layer.
    RbmGibbs = 2,
    /// Mini-batch order during RBM pretraining; index = layer.
    RbmShuffle = 3,
    /// Output layer initialisation.
    OutputInit = 4,
    /// Mini-batch order during fine-tuning.
    FineTuneShuffle = 5,
    /// Stratified subsampling.
    Subsample = 6,
}

pub fn stream_id(purpose: Purpose, index: u32) -> u64 {
    ((purpose as u64) << 32) | index as u64
}

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn purpose_stream(seed: u64, purpose: Purpose, index: u32) -> ChaCha8Rng {
    stream(seed, stream_id(purpose, index))
}

/// Derives an independent child seed (SplitMix64 finalizer over `seed + salt`).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
