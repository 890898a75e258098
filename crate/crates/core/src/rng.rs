//! Seeded random streams.
//!
//! Every random draw in the crate comes from an explicitly passed [`StreamRng`].
//! Independent streams are derived from one root seed by name and index, so a
//! run is reproducible from its root seed alone.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha12Rng;

/// Stream seeded directly from a 64-bit seed.
pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Stream for `(root, label, index)`; distinct labels or indices give
/// statistically independent streams.
pub fn substream(root: u64, label: &str, index: u64) -> StreamRng {
    StreamRng::from_seed(derive_seed(root, label, index))
}

/// 64-bit seed derived the same way as [`substream`], for records that store seeds.
pub fn derive_u64(root: u64, label: &str, index: u64) -> u64 {
    let seed = derive_seed(root, label, index);
    u64::from_le_bytes(seed[..8].try_into().expect("8 bytes"))
}

fn derive_seed(root: u64, label: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

/// Standard circularly-symmetric complex Gaussian: `E|z|² = 1`, each part with variance 1/2.
pub fn standard_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
