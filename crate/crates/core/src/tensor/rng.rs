//! Seeded, platform-independent random streams.
//!
//! Backed by ChaCha8 in counter mode: the output is a pure function of
//! `(seed, stream, word position)`, so streams agree bitwise everywhere.
//! Child streams for per-sample work are derived from `(seed, index)`, which
//! makes parallel and serial generation identical.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::value::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream number `index` under this generator's seed.
    pub fn child(&self, index: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(index.wrapping_add(1));
        Rng { seed: self.seed, inner }
    }

    /// Fresh generator whose seed is derived from `(seed, tag)`.
    pub fn derive_seed(seed: u64, tag: u64) -> u64 {
        let mut r = Rng::new(seed).child(tag);
        r.next_u64()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        // Lemire's multiply-shift with rejection keeps the draw unbiased.
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            let m = (x as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Standard normal via Box–Muller over two uniforms.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn uniform_scalar(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("uniform bounds require lo < hi, got [{lo}, {hi})")));
        }
        Ok(lo + (hi - lo) * self.next_f64())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64, shape: &[usize]) -> Result<Tensor> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("uniform bounds require lo < hi, got [{lo}, {hi})")));
        }
        let n = shape.iter().product();
        let data = (0..n).map(|_| lo + (hi - lo) * self.next_f64()).collect();
        Ok(Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn normal(&mut self, mean: f64, std: f64, shape: &[usize]) -> Result<Tensor> {
        if !(std >= 0.0) {
            return Err(Error::InvalidArgument(format!("normal std must be >= 0, got {std}")));
        }
        let n = shape.iter().product();
        let data = (0..n).map(|_| mean + std * self.next_normal()).collect();
        Ok(Tensor::from_parts(shape.to_vec(), data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn first_uniform_for_seed_zero_is_frozen() {
        let mut r = Rng::new(0);
        let v = r.next_f64();
        assert_eq!(v.to_bits(), GOLDEN_SEED0_FIRST_UNIFORM.to_bits(), "got {v:?}");
    }

    const GOLDEN_SEED0_FIRST_UNIFORM: f64 = 0.709_075_415_426_561_8;

    #[test]
    fn zero_std_gives_mean() {
        let t = Rng::new(3).normal(1.25, 0.0, &[10]).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn uniform_mean() {
        let t = Rng::new(0).uniform(0.0, 1.0, &[100_000]).unwrap();
        assert!((t.mean() - 0.5).abs() < 0.01);
        assert!(t.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn bad_bounds() {
        assert!(Rng::new(0).uniform(1.0, 1.0, &[1]).is_err());
        assert!(Rng::new(0).normal(0.0, -1.0, &[1]).is_err());
    }

    #[test]
    fn children_differ_and_repeat() {
        let root = Rng::new(11);
        let mut c0 = root.child(0);
        let mut c1 = root.child(1);
        let mut c0b = root.child(0);
        let x = c0.next_u64();
        assert_ne!(x, c1.next_u64());
        assert_eq!(x, c0b.next_u64());
    }

    #[test]
    fn below_is_in_range() {
        let mut r = Rng::new(5);
        for n in 1..50 {
            assert!(r.below(n) < n);
        }
    }
}
