//! Deterministic random number generation.
//!
//! The generator is SplitMix64: a 64-bit counter advanced by the golden
//! gamma `0x9E3779B97F4A7C15`, with the output finalizer
//!
//! ```text
//! z  = state
//! z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
//! z ^= z >> 27;  z *= 0x94D049BB133111EB
//! out = z ^ (z >> 31)
//! ```
//!
//! All arithmetic is wrapping 64-bit, so the stream is bit-exact across
//! platforms. Test vectors are pinned in this module's tests.
//!
//! Derived draws are documented transforms of that stream:
//! - uniform in `[0, 1)`: `(next_u64() >> 11) * 2^-53`
//! - uniform in `(0, 1]`: `((next_u64() >> 11) + 1) * 2^-53`
//! - standard normal: Box–Muller cosine branch, consuming exactly two
//!   64-bit draws per sample:
//!   `sqrt(-2 ln u1) * cos(2π u2)` with `u1 ∈ (0,1]`, `u2 ∈ [0,1)`.
//! - integer below `n`: `(next_u64() * n) >> 64` via 128-bit widening.

use crate::buffer::ImageBuffer;
use crate::error::{PnpError, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SCALE_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Seeded, single-owner generator. Identical seed and call sequence yield
/// an identical stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    state: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, state: seed }
    }

    /// The seed this generator was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * SCALE_53
    }

    /// Uniform double in `(0, 1]` (safe as a logarithm argument).
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * SCALE_53
    }

    /// Standard normal sample; consumes exactly two 64-bit draws.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`.
    pub fn uniform_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// In-place Fisher–Yates shuffle (iterating from the back).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Buffer of i.i.d. `N(0, sigma²)` samples.
///
/// `sigma == 0` short-circuits to an all-zero buffer without consuming any
/// draws.
pub fn gaussian_noise(rng: &mut SeededRng, shape: &[usize], sigma: f64) -> Result<ImageBuffer> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(PnpError::InvalidArgument {
            name: "sigma",
            reason: format!("must be finite and >= 0, got {sigma}"),
        });
    }
    if sigma == 0.0 {
        return ImageBuffer::zeros(shape);
    }
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| sigma * rng.standard_normal()).collect();
    ImageBuffer::new(shape.to_vec(), data)
}
