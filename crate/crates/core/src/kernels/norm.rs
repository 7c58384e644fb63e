//! Group normalization over CHW tensors.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{ExecMode, Layout, Tensor};

/// Normalize each group of `C / groups` channels to zero mean and unit
/// variance, then apply the per-channel affine `gamma * x + beta`.
pub fn group_norm(
    x: &Tensor,
    groups: usize,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
    mode: ExecMode,
) -> Result<Tensor> {
    x.ensure_finite("group_norm input")?;
    let (c, h, w) = x.chw_dims()?;
    if groups == 0 || c % groups != 0 {
        return Err(shape_err!("{c} channels cannot be split into {groups} groups"));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(shape_err!(
            "gamma/beta have {}/{} entries for {c} channels",
            gamma.len(),
            beta.len()
        ));
    }
    let per_group = c / groups;
    let group_len = per_group * h * w;
    let mut out = vec![0.0f32; x.numel()];

    let job = |(g, (dst, src)): (usize, (&mut [f32], &[f32]))| {
        let channels = g * per_group..(g + 1) * per_group;
        if mode.is_naive() {
            naive_group(src, dst, h * w, &gamma[channels.clone()], &beta[channels], eps);
        } else {
            fused_group(src, dst, h * w, &gamma[channels.clone()], &beta[channels], eps);
        }
    };
    let pairs = out.chunks_mut(group_len).zip(x.data().chunks(group_len));
    if mode.parallel() {
        pairs
            .enumerate()
            .collect::<Vec<_>>()
            .into_par_iter()
            .for_each(job);
    } else {
        pairs.enumerate().for_each(job);
    }
    Ok(Tensor::from_parts(vec![c, h, w], Layout::Chw, out))
}

fn naive_group(src: &[f32], dst: &mut [f32], plane: usize, gamma: &[f32], beta: &[f32], eps: f32) {
    let n = src.len() as f64;
    let mean = src.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = src
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let inv_std = 1.0 / (var + eps as f64).sqrt();
    for (i, (d, &s)) in dst.iter_mut().zip(src).enumerate() {
        let ch = i / plane;
        *d = (((s as f64 - mean) * inv_std) * gamma[ch] as f64 + beta[ch] as f64) as f32;
    }
}

fn fused_group(src: &[f32], dst: &mut [f32], plane: usize, gamma: &[f32], beta: &[f32], eps: f32) {
    // Single pass for both moments, shifted by the first element so that a
    // large common offset does not cancel catastrophically.
    let shift = src[0] as f64;
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &v in src {
        let d = v as f64 - shift;
        s1 += d;
        s2 += d * d;
    }
    let n = src.len() as f64;
    let mean_d = s1 / n;
    let var = (s2 / n - mean_d * mean_d).max(0.0);
    let mean = shift + mean_d;
    let inv_std = 1.0 / (var + eps as f64).sqrt();
    for (ch, (d, s)) in dst.chunks_mut(plane).zip(src.chunks(plane)).enumerate() {
        let scale = gamma[ch] as f64 * inv_std;
        let offset = beta[ch] as f64;
        for (o, &v) in d.iter_mut().zip(s) {
            *o = ((v as f64 - mean) * scale + offset) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalizes_to_beta() {
        let x = Tensor::chw(4, 2, 2, vec![3.0; 16]).unwrap();
        for mode in [ExecMode::naive(), ExecMode::optimized()] {
            let y = group_norm(&x, 2, &[1.0; 4], &[0.0; 4], 1e-6, mode).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0));
            let y = group_norm(&x, 2, &[1.0; 4], &[0.5; 4], 1e-6, mode).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn indivisible_groups_are_rejected() {
        let x = Tensor::chw(3, 1, 1, vec![0.0; 3]).unwrap();
        assert!(group_norm(&x, 2, &[1.0; 3], &[0.0; 3], 1e-6, ExecMode::naive()).is_err());
        assert!(group_norm(&x, 3, &[1.0; 2], &[0.0; 3], 1e-6, ExecMode::naive()).is_err());
    }
}
