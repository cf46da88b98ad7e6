//! Seeded parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::tensor::Tensor;

/// 64-bit FNV-1a; stable across platforms and compiler versions.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// RNG for a named stream under a global seed.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stable_hash(stream.as_bytes()))
}

pub fn normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::new((0..n).map(|_| dist.sample(rng)).collect(), shape).expect("shape")
}

/// He-normal initialization with the given fan-in.
pub fn kaiming(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    normal(shape, (2.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// Glorot-style initialization for layers not followed by a ReLU.
pub fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    normal(shape, (2.0 / (fan_in + fan_out).max(1) as f64).sqrt(), rng)
}

pub fn standard_normal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
