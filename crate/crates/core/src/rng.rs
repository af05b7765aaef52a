//! Seeded pseudo-random number generation.
//!
//! Every stochastic step in the crate draws from [`Xoshiro256PlusPlus`]
//! seeded through SplitMix64, so results are portable across platforms.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng;

/// Name written into serialized fold plans and model headers.
pub const RNG_ALGORITHM: &str = "xoshiro256++ (splitmix64-seeded)";

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// One SplitMix64 step; used to derive independent sub-seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for a named sub-stream of `seed`.
pub fn derived(seed: u64, stream: u64) -> Rng {
    seeded(splitmix64(seed ^ splitmix64(stream)))
}
