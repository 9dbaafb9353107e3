//! Deterministic seed derivation.
//!
//! Every derived stream is `mix(parent, index)`, where `mix` applies the
//! SplitMix64 finalizer to `parent` and then to the xor of that result with
//! a finalized, odd-multiplied `index`. Replication `i` of a study uses
//! `derive(master_seed, i)`; individual `id` within a cohort uses
//! `derive(cohort_seed, id)`. Streams are ChaCha8 generators seeded from the
//! derived value, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed number `index` of `parent`.
pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix(splitmix(parent) ^ splitmix(index.wrapping_mul(2).wrapping_add(1)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for one individual's stream within a cohort.
pub fn individual_rng(cohort_seed: u64, id: u64) -> ChaCha8Rng {
    rng(derive(cohort_seed, id))
}
