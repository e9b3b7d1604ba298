use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The one PRNG used everywhere. Seeded through SplitMix64 and always passed
/// explicitly.
pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Derives an independent stream for a named purpose from a base seed.
pub fn derive(seed: u64, stream: u64) -> Rng {
    seeded(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
