//! Seeded inputs shared by the criterion benches.

use lwdec_core::{Layout, Tensor};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize], layout: Layout, lo: f32, hi: f32, seed: u64) -> Tensor {
    let dist = Uniform::new_inclusive(lo, hi).expect("lo <= hi");
    let n = shape.iter().product();
    let data = dist.sample_iter(ChaCha8Rng::seed_from_u64(seed)).take(n).collect();
    Tensor::new(shape.to_vec(), layout, data).expect("shape matches data")
}

pub fn chw(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    uniform(&[c, h, w], Layout::Chw, -1.0, 1.0, seed)
}

/// `[out, in, k, k]` kernel scaled like a fan-in initialization.
pub fn conv_weight(out: usize, inp: usize, k: usize, seed: u64) -> Tensor {
    let bound = 1.0 / ((inp * k * k) as f32).sqrt();
    uniform(&[out, inp, k, k], Layout::Flat, -bound, bound, seed)
}

pub fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    uniform(&[rows, cols], Layout::Flat, -1.0, 1.0, seed)
}
