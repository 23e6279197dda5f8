//! Seeded RNG plumbing.
//!
//! Every random decision in the crate flows through a `ChaCha8Rng` created
//! here, either directly from a seed or derived from a (seed, stream) pair.
//! Derivation is splitmix-based so streams for different purposes and epochs
//! never overlap and never depend on call order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Create a deterministic RNG from a seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent RNG stream from a base seed and a stream index.
pub fn derive_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    seeded_rng(splitmix64(seed ^ splitmix64(stream)))
}

/// Derive a stream keyed by two indices (e.g. epoch and purpose).
pub fn derive_stream2(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    derive_stream(splitmix64(seed ^ splitmix64(a)), b)
}

/// Derive a plain sub-seed keyed by two indices; for components that seed
/// their own streams.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b))
}

/// One standard-normal draw (Box-Muller; consumes two uniforms).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // u in (0, 1] so ln never sees zero.
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen::<f64>();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}
