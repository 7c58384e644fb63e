use rayon::prelude::*;

use super::gemm::{gemm, MatRef};
use crate::error::{shape_err, Result};
use crate::tensor::{ExecMode, Layout, Tensor};

/// `y = x Wᵀ + b` for `x: [L, in]`, `W: [out, in]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&[f32]>, mode: ExecMode) -> Result<Tensor> {
    let (rows, fan_in) = x.matrix_dims()?;
    let (fan_out, w_in) = weight.matrix_dims()?;
    if w_in != fan_in {
        return Err(shape_err!("linear expects {w_in} inputs, got {fan_in}"));
    }
    if bias.is_some_and(|b| b.len() != fan_out) {
        return Err(shape_err!("linear bias length differs from {fan_out} outputs"));
    }
    let (xd, wd) = (x.data(), weight.data());
    let mut out = vec![0.0f32; rows * fan_out];
    if mode.is_naive() {
        for r in 0..rows {
            for o in 0..fan_out {
                let mut acc = bias.map_or(0.0, |b| b[o] as f64);
                for i in 0..fan_in {
                    acc += xd[r * fan_in + i] as f64 * wd[o * fan_in + i] as f64;
                }
                out[r * fan_out + o] = acc as f32;
            }
        }
    } else {
        const ROWS: usize = 256;
        let w_t = MatRef::transposed(wd, fan_out, fan_in);
        let job = |(b, dst): (usize, &mut [f32])| {
            let n = dst.len() / fan_out;
            if let Some(bias) = bias {
                for row in dst.chunks_exact_mut(fan_out) {
                    row.copy_from_slice(bias);
                }
            }
            let src = MatRef::row_major(&xd[b * ROWS * fan_in..(b * ROWS + n) * fan_in], n, fan_in);
            gemm(1.0, src, w_t, if bias.is_some() { 1.0 } else { 0.0 }, dst);
        };
        if mode.parallel() {
            out.par_chunks_mut(ROWS * fan_out).enumerate().for_each(job);
        } else {
            out.chunks_mut(ROWS * fan_out).enumerate().for_each(job);
        }
    }
    Ok(Tensor::from_parts(vec![rows, fan_out], Layout::Flat, out))
}
