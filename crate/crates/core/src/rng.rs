//! Seeded random sources.
//!
//! Every random decision in the toolkit flows through a ChaCha8 stream keyed
//! by an explicit seed plus a textual stream label, so splits, augmentations
//! and weight initialization are reproducible bit-for-bit on every platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng as _, SeedableRng};

use crate::hash::ContentHash;

/// Deterministic random stream.
pub struct Stream(ChaCha8Rng);

impl Stream {
    /// Derive an independent stream from a seed and a label such as
    /// `("augment", sample_id, epoch)` folded into `label`.
    pub fn derive(seed: u64, label: &str) -> Self {
        let mut h = ContentHash::new();
        h.update(&seed.to_le_bytes());
        h.update_str(label);
        let a = h.finish();
        h.update_str("lane2");
        let b = h.finish();
        h.update_str("lane3");
        let c = h.finish();
        h.update_str("lane4");
        let d = h.finish();
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&a.to_le_bytes());
        key[8..16].copy_from_slice(&b.to_le_bytes());
        key[16..24].copy_from_slice(&c.to_le_bytes());
        key[24..32].copy_from_slice(&d.to_le_bytes());
        Stream(ChaCha8Rng::from_seed(key))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Multiply-shift rejection-free mapping; bias is < 2^-53 for our n.
        ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * n as f64) as usize % n
    }

    /// Uniform f32 in `[0, 1)`.
    pub fn unit_f32(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u64 << 24) as f32
    }

    /// Uniform f32 in `[lo, hi)`.
    pub fn range_f32(&mut self, lo: f32, hi: f32) -> f32 {
        lo + (hi - lo) * self.unit_f32()
    }

    pub fn bool_with(&mut self, p: f32) -> bool {
        self.unit_f32() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal_f32(&mut self) -> f32 {
        let u1 = (self.unit_f32() as f64).max(1e-12);
        let u2 = self.unit_f32() as f64;
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
