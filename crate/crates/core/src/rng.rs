//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha20 stream whose 32-byte
//! key is `SHA-256("thermaleq/v1" || seed as u64 little-endian || label)`,
//! with the ChaCha20 counter starting at zero. Distinct labels give
//! independent streams for the same user seed, so the bath spectrum and the
//! coupling never share draws.
//!
//! Normal deviates use the Box-Muller transform on pairs of uniforms
//! `u = (x >> 11) as f64 * 2^-53 + 2^-54`, where `x` is the next `u64` of the
//! stream; the pair yields `r cos(2πu₂)` then `r sin(2πu₂)` with
//! `r = sqrt(-2 ln u₁)`. The transform is spelled out here so another
//! implementation can reproduce the exact same matrices.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::Complex64;

/// Stream labels used by the generators.
pub mod label {
    pub const BATH_RANDOM_MATRIX: &str = "bath/random-matrix";
    pub const COUPLING_RANDOM_HERMITIAN: &str = "coupling/random-hermitian";
    pub const COUPLING_BATH_OPERATOR: &str = "coupling/bath-operator";
}

/// A deterministic normal-deviate stream.
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"thermaleq/v1");
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        Self {
            rng: ChaCha20Rng::from_seed(key),
            spare: None,
        }
    }

    /// Uniform deviate in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Complex normal with independent standard-normal real and imaginary parts.
    pub fn complex_normal(&mut self) -> Complex64 {
        let re = self.normal();
        let im = self.normal();
        Complex64::new(re, im)
    }
}
