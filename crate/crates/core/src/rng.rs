//! Seeded, splittable randomness.
//!
//! A 64-bit seed plus a stream identifier define a key; the `n`-th raw draw
//! of a stream is `mix(key + n·φ)` where `mix` is the SplitMix64 finalizer
//! and `φ = 0x9E3779B97F4A7C15`. Child streams are derived with
//! `key' = mix(key ^ mix(child_id))`, so any draw can be located without
//! replaying its predecessors. Uniforms use the top 53 bits, offset by half
//! an ulp so they lie strictly inside (0, 1); Gaussian variates are the
//! inverse normal CDF of such a uniform.

use statrs::distribution::{ContinuousCDF, Normal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SeedStream {
    key: u64,
    counter: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed),
            counter: 0,
        }
    }

    pub fn split(&self, child: u64) -> Self {
        Self {
            key: mix(self.key ^ mix(child.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn next_gaussian(&mut self) -> f64 {
        standard_normal().inverse_cdf(self.next_uniform())
    }

    pub fn gaussian_vec(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.next_gaussian()).collect()
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}
