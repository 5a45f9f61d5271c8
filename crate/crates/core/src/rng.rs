//! Deterministic random-stream derivation.
//!
//! Every stochastic operation draws from a [`ChaCha8Rng`] whose seed is
//! derived from a master seed with [`derive_seed`]. Bulk per-particle work
//! gives particle `j` its own ChaCha stream ([`particle_rng`]), so the result
//! is bit-identical no matter how the particles are batched across workers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain-separation tags for the stochastic phases of a filter time step.
pub mod phase {
    pub const INIT: u64 = 0x01;
    pub const PROPAGATE: u64 = 0x02;
    pub const RESAMPLE: u64 = 0x03;
    pub const REGULARIZE: u64 = 0x04;
    /// Base tag for horizon-τ prediction; add τ.
    pub const PREDICT: u64 = 0x100;
    /// Base tag for horizon-τ observation-noise sampling; add τ.
    pub const OBS_NOISE: u64 = 0x200;
}

/// Mixes a seed with a tag (SplitMix64 finalizer). Used to derive per-step,
/// per-phase and per-chain seeds from a master seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for a single-stream (scalar) phase such as resampling.
pub fn phase_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for particle `j` inside a phase: same key as `base`, dedicated stream.
pub fn particle_rng(base: &ChaCha8Rng, j: usize) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_stream(j as u64);
    rng
}
