//! Seeded deterministic randomness.
//!
//! Every consumer that must be reproducible draws from a [`RandomSource`].
//! Independent streams (per page initial values, per Monte-Carlo worker) are
//! derived from one seed with [`RandomSource::for_stream`] so that results do
//! not depend on the order in which pages are first touched or on how many
//! threads run.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha12Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::for_stream(seed, 0)
    }

    pub fn for_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform `bits`-bit value; `draw(0)` is always zero.
    pub fn draw(&mut self, bits: u32) -> u64 {
        match bits {
            0 => 0,
            64.. => self.rng.next_u64(),
            b => self.rng.next_u64() >> (64 - b),
        }
    }

    /// True with probability `2^-exp`.
    pub fn one_in_pow2(&mut self, exp: u32) -> bool {
        self.draw(exp) == 0
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, n)`.
    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.gen_range(0..n)
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        p >= 1.0 || (p > 0.0 && self.unit() < p)
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        self.rng.fill_bytes(buf);
    }

    /// Borrow as a `rand` generator for distribution sampling.
    pub fn as_rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream_for_a_million_draws() {
        let mut a = RandomSource::new(0xC0FFEE);
        let mut b = RandomSource::new(0xC0FFEE);
        for _ in 0..1_000_000 {
            assert_eq!(a.draw(27), b.draw(27));
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = RandomSource::for_stream(7, 1);
        let mut b = RandomSource::for_stream(7, 2);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn draw_respects_width() {
        let mut r = RandomSource::new(1);
        for bits in 0..=64 {
            for _ in 0..100 {
                let v = r.draw(bits);
                if bits < 64 {
                    assert!(v < 1u64 << bits);
                }
            }
        }
    }

    #[test]
    fn draw_is_roughly_uniform() {
        let mut r = RandomSource::new(99);
        let mut counts = [0u32; 16];
        let n = 160_000;
        for _ in 0..n {
            counts[r.draw(4) as usize] += 1;
        }
        // 10k expected per bucket, sd ~97
        for c in counts {
            assert!((c as i64 - 10_000).abs() < 500, "{counts:?}");
        }
    }
}
