//! Counter-based random streams.
//!
//! A stream is fully described by `(seed, counter)`. Every scalar draw
//! consumes exactly one 64-bit word of the ChaCha8 keystream at position
//! `counter`, so equal `(seed, counter)` pairs reproduce bit-identical draws
//! and consumers that need independence take a [`RngStream::split`] instead of
//! sharing a generator. Transcendentals go through `libm` so the derived
//! normal and logistic variates do not depend on the platform's math library.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::Tensor;

/// Open-interval guard applied to every uniform draw.
pub const UNIFORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Uniform01,
    StdNormal,
    StdLogistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    counter: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0 }
    }

    pub fn at(seed: u64, counter: u64) -> Self {
        RngStream { seed, counter }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Child stream keyed by `key`; it does not overlap the parent or any
    /// sibling with a different key.
    pub fn split(&self, key: u64) -> RngStream {
        RngStream::new(splitmix64(self.seed ^ splitmix64(key.wrapping_add(0xA076_1D64_78BD_642F))))
    }

    fn generator(&self) -> ChaCha8Rng {
        let mut g = ChaCha8Rng::seed_from_u64(self.seed);
        g.set_word_pos(u128::from(self.counter) * 2);
        g
    }

    /// Raw words; advances the counter by `out.len()`.
    pub fn fill_u64(&mut self, out: &mut [u64]) {
        let mut g = self.generator();
        for w in out.iter_mut() {
            *w = g.next_u64();
        }
        self.counter += out.len() as u64;
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut w = [0u64];
        self.fill_u64(&mut w);
        w[0]
    }

    /// Uniform integer in `0..n` (multiply-shift; bias below 2^-40 for the
    /// sizes used here).
    pub fn below(&mut self, n: usize) -> usize {
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn uniform(&mut self) -> f64 {
        word_to_uniform(self.next_u64())
    }

    pub fn sample(&mut self, kind: NoiseKind, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let mut words = vec![0u64; n];
        self.fill_u64(&mut words);
        let data = words
            .into_iter()
            .map(|w| match kind {
                NoiseKind::Uniform01 => word_to_uniform(w),
                NoiseKind::StdNormal => word_to_normal(w),
                NoiseKind::StdLogistic => logistic_from_uniform(word_to_uniform(w)),
            })
            .collect();
        Tensor::new(shape, data).expect("sample shape")
    }

    /// Uniform permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

fn word_to_uniform(w: u64) -> f64 {
    let u = ((w >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS)
}

// Box-Muller on the two 32-bit halves of one word.
fn word_to_normal(w: u64) -> f64 {
    let scale = 1.0 / 4_294_967_296.0;
    let u1 = ((w >> 32) as f64 + 0.5) * scale;
    let u2 = ((w & 0xFFFF_FFFF) as f64 + 0.5) * scale;
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
}

/// Standard logistic variate `log u - log(1 - u)`.
pub fn logistic_from_uniform(u: f64) -> f64 {
    libm::log(u) - libm::log1p(-u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_of_half_is_zero() {
        assert_eq!(logistic_from_uniform(0.5), 0.0);
    }

    #[test]
    fn counter_advances_by_draw_count() {
        let mut s = RngStream::new(7);
        s.sample(NoiseKind::StdNormal, &[3, 5]);
        assert_eq!(s.counter(), 15);
        s.uniform();
        assert_eq!(s.counter(), 16);
    }

    #[test]
    fn same_seed_and_counter_are_bit_identical() {
        let a = RngStream::at(11, 40).sample(NoiseKind::StdLogistic, &[64]);
        let b = RngStream::at(11, 40).sample(NoiseKind::StdLogistic, &[64]);
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn counter_offsets_address_the_same_keystream() {
        let mut whole = RngStream::new(3);
        let all = whole.sample(NoiseKind::Uniform01, &[10]);
        let tail = RngStream::at(3, 6).sample(NoiseKind::Uniform01, &[4]);
        assert_eq!(&all.data()[6..], tail.data());
    }

    #[test]
    fn uniform_stays_open() {
        assert!(word_to_uniform(0) >= UNIFORM_EPS);
        assert!(word_to_uniform(u64::MAX) <= 1.0 - UNIFORM_EPS);
        assert!(word_to_uniform(u64::MAX) < 1.0);
    }

    #[test]
    fn normal_moments() {
        let x = RngStream::new(2024).sample(NoiseKind::StdNormal, &[1_000_000]);
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.004, "mean {mean}");
        assert!((var - 1.0).abs() <= 0.01, "var {var}");
    }

    #[test]
    fn splits_differ() {
        let root = RngStream::new(1);
        assert_ne!(root.split(0).next_u64(), root.split(1).next_u64());
        assert_eq!(root.split(5), root.split(5));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RngStream::new(9).permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
