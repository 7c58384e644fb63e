//! Scaled dot-product attention, single head.
//!
//! The optimized path streams over blocks of query rows so the score matrix
//! never exceeds `QUERY_BLOCK x L` floats, which keeps the 16k-token mid-block
//! attention of a 1024x1024 decode within memory.

use rayon::prelude::*;

use super::gemm::{gemm, MatRef};
use crate::error::{shape_err, Result};
use crate::tensor::{ExecMode, Layout, Tensor};

const QUERY_BLOCK: usize = 64;

fn check(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize)> {
    let (l, d) = q.matrix_dims()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(shape_err!(
            "q/k/v shapes differ: {:?} / {:?} / {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    Ok((l, d))
}

/// `softmax(q kᵀ · scale) v` with `scale` defaulting to `1/sqrt(D)`.
pub fn attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    scale: Option<f32>,
    mode: ExecMode,
) -> Result<Tensor> {
    let (l, d) = check(q, k, v)?;
    for (t, name) in [(q, "query"), (k, "key"), (v, "value")] {
        t.ensure_finite(name)?;
    }
    let scale = scale.unwrap_or(1.0 / (d as f32).sqrt());
    let out = if mode.is_naive() {
        naive(q.data(), k.data(), v.data(), l, d, scale)
    } else {
        blocked(q.data(), k.data(), v.data(), l, d, scale, mode.parallel())
    };
    Ok(Tensor::from_parts(vec![l, d], Layout::Flat, out))
}

/// The `[L, L]` row-stochastic attention matrix `softmax(q kᵀ · scale)`.
pub fn attention_probs(q: &Tensor, k: &Tensor, scale: Option<f32>, mode: ExecMode) -> Result<Tensor> {
    let (l, d) = q.matrix_dims()?;
    if k.shape() != q.shape() {
        return Err(shape_err!("q/k shapes differ: {:?} / {:?}", q.shape(), k.shape()));
    }
    let scale = scale.unwrap_or(1.0 / (d as f32).sqrt());
    let mut probs = vec![0.0f32; l * l];
    if mode.is_naive() {
        for i in 0..l {
            let row = naive_row(q.data(), k.data(), i, l, d, scale);
            for (p, r) in probs[i * l..(i + 1) * l].iter_mut().zip(row) {
                *p = r as f32;
            }
        }
    } else {
        gemm(
            scale,
            MatRef::row_major(q.data(), l, d),
            MatRef::transposed(k.data(), l, d),
            0.0,
            &mut probs,
        );
        probs.chunks_exact_mut(l).for_each(softmax_in_place);
    }
    Ok(Tensor::from_parts(vec![l, l], Layout::Flat, probs))
}

fn naive_row(q: &[f32], k: &[f32], i: usize, l: usize, d: usize, scale: f32) -> Vec<f64> {
    let scores: Vec<f64> = (0..l)
        .map(|j| {
            let dot: f64 = (0..d).map(|c| q[i * d + c] as f64 * k[j * d + c] as f64).sum();
            dot * scale as f64
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn naive(q: &[f32], k: &[f32], v: &[f32], l: usize, d: usize, scale: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; l * d];
    for i in 0..l {
        let probs = naive_row(q, k, i, l, d, scale);
        for c in 0..d {
            let acc: f64 = (0..l).map(|j| probs[j] * v[j * d + c] as f64).sum();
            out[i * d + c] = acc as f32;
        }
    }
    out
}

fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for s in row.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    let inv = 1.0 / sum;
    for s in row.iter_mut() {
        *s *= inv;
    }
}

fn blocked(q: &[f32], k: &[f32], v: &[f32], l: usize, d: usize, scale: f32, parallel: bool) -> Vec<f32> {
    let mut out = vec![0.0f32; l * d];
    let keys = MatRef::transposed(k, l, d);
    let values = MatRef::row_major(v, l, d);
    let job = |(b, dst): (usize, &mut [f32]), scores: &mut Vec<f32>| {
        let rows = dst.len() / d;
        let start = b * QUERY_BLOCK;
        scores.resize(rows * l, 0.0);
        let queries = MatRef::row_major(&q[start * d..(start + rows) * d], rows, d);
        gemm(scale, queries, keys, 0.0, scores);
        scores.chunks_exact_mut(l).for_each(softmax_in_place);
        gemm(1.0, MatRef::row_major(scores, rows, l), values, 0.0, dst);
    };
    if parallel {
        out.par_chunks_mut(QUERY_BLOCK * d)
            .enumerate()
            .for_each_init(Vec::new, |scores, item| job(item, scores));
    } else {
        let mut scores = Vec::new();
        for item in out.chunks_mut(QUERY_BLOCK * d).enumerate() {
            job(item, &mut scores);
        }
    }
    out
}
