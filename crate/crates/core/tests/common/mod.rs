#![allow(dead_code)]

use lwdec_core::{Layout, Tensor};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(n: usize, lo: f32, hi: f32, seed: u64) -> Vec<f32> {
    let d = Uniform::new_inclusive(lo, hi).unwrap();
    d.sample_iter(rng(seed)).take(n).collect()
}

pub fn random_tensor(shape: &[usize], layout: Layout, seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), layout, uniform_vec(n, -1.0, 1.0, seed)).unwrap()
}

pub fn random_chw(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    random_tensor(&[c, h, w], Layout::Chw, seed)
}

pub fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
    Tensor::chw(3, h, w, uniform_vec(3 * h * w, 0.0, 1.0, seed)).unwrap()
}

/// Largest absolute difference divided by the reference's peak magnitude.
pub fn rel_err(got: &[f32], reference: &[f32]) -> f64 {
    assert_eq!(got.len(), reference.len());
    let peak = reference.iter().fold(0f64, |m, v| m.max(v.abs() as f64));
    let err = got
        .iter()
        .zip(reference)
        .fold(0f64, |m, (a, b)| m.max((*a as f64 - *b as f64).abs()));
    if peak == 0.0 {
        err
    } else {
        err / peak
    }
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0f64, |m, (x, y)| m.max((*x as f64 - *y as f64).abs()))
}

/// Proptest settings without the regression file, which integration tests cannot locate.
pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases: n,
        failure_persistence: None,
        ..Default::default()
    }
}
