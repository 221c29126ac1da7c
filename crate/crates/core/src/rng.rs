//! Deterministic randomness.
//!
//! All sampling in the crate flows through [`DetRng`], a ChaCha8 stream with
//! explicitly documented scalar transforms, so a `(seed, draw sequence)` pair
//! pins every generated byte:
//!
//! * `uniform`: `(next_u64 >> 11) * 2⁻⁵³`, uniform on `[0, 1)`.
//! * `normal`: Box–Muller, `sqrt(-2 ln u₁) · cos(2π u₂)` with `u₁ ∈ (0, 1]`.
//! * `index(n)`: `(next_u64 · n) >> 64` via 128-bit widening.
//!
//! Seeds are derived with the SplitMix64 finalizer, which is bijective on
//! `u64`, so per-task streams never collide for distinct derivation counters.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// SplitMix64 finalizer step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a salt/counter.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(splitmix64(base ^ 0x6A09_E667_F3BC_C909).wrapping_add(salt))
}

/// Deterministic random stream.
#[derive(Debug, Clone)]
pub struct DetRng(ChaCha8Rng);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform draw on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw (Box–Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal_with(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n` without modulo bias.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index over empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices drawn from `0..n` (partial Fisher–Yates).
    ///
    /// Consumes exactly `k` draws regardless of `n`.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} distinct from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
