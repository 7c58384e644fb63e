//! 2-D convolution with zero padding.
//!
//! The optimized path lowers the convolution to GEMM over fixed-size tiles of
//! output positions (im2col per tile). Tile boundaries do not depend on the
//! thread count, so every output element is reduced in the same order no
//! matter how the tiles are scheduled.

use rayon::prelude::*;

use super::gemm::{gemm_raw, MatRef, SharedMut};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{ExecMode, Layout, Tensor};

/// Output positions per im2col tile.
const TILE: usize = 256;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    in_c: usize,
    // Spatial size seen by the kernel (after the optional 2x upsample).
    in_h: usize,
    in_w: usize,
    // Spatial size of the stored input.
    src_h: usize,
    src_w: usize,
    up2x: bool,
    out_c: usize,
    k_h: usize,
    k_w: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn new(
        input: &Tensor,
        weight: &Tensor,
        bias: Option<&[f32]>,
        stride: usize,
        pad: usize,
        up2x: bool,
    ) -> Result<Self> {
        let (c, src_h, src_w) = input.chw_dims()?;
        let (out_c, in_c, k_h, k_w) = match weight.shape() {
            &[o, i, kh, kw] => (o, i, kh, kw),
            s => return Err(shape_err!("conv weight must be [outC, inC, kH, kW], got {s:?}")),
        };
        if c != in_c {
            return Err(shape_err!(
                "input has {c} channels but the kernel expects {in_c}"
            ));
        }
        if let Some(b) = bias {
            if b.len() != out_c {
                return Err(shape_err!("bias has {} entries for {out_c} outputs", b.len()));
            }
        }
        if stride == 0 {
            return Err(shape_err!("stride must be positive"));
        }
        let (in_h, in_w) = if up2x {
            (src_h * 2, src_w * 2)
        } else {
            (src_h, src_w)
        };
        let span = |n: usize, k: usize| -> Result<usize> {
            let padded = n + 2 * pad;
            if padded < k {
                return Err(Error::EmptyOutput(format!(
                    "kernel {k} does not fit padded extent {padded}"
                )));
            }
            Ok((padded - k) / stride + 1)
        };
        Ok(Geometry {
            in_c,
            in_h,
            in_w,
            src_h,
            src_w,
            up2x,
            out_c,
            k_h,
            k_w,
            stride,
            pad,
            out_h: span(in_h, k_h)?,
            out_w: span(in_w, k_w)?,
        })
    }

    /// Input value at kernel-space coordinates, zero outside the image.
    #[inline]
    fn fetch(&self, src: &[f32], c: usize, y: isize, x: isize) -> f32 {
        if y < 0 || x < 0 || y >= self.in_h as isize || x >= self.in_w as isize {
            return 0.0;
        }
        let (y, x) = if self.up2x {
            (y as usize / 2, x as usize / 2)
        } else {
            (y as usize, x as usize)
        };
        src[(c * self.src_h + y) * self.src_w + x]
    }

    /// Output columns `ox` for which `ox * stride + kx - pad` lies inside the
    /// input width, as a half-open range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.in_w + self.pad > kx {
            ((self.in_w + self.pad - kx - 1) / self.stride + 1).min(self.out_w)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Convolve a CHW input with a `[outC, inC, kH, kW]` kernel.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    padding: usize,
    mode: ExecMode,
) -> Result<Tensor> {
    input.ensure_finite("conv2d input")?;
    let g = Geometry::new(input, weight, bias, stride, padding, false)?;
    Ok(run(&g, input.data(), weight.data(), bias, mode))
}

/// Convolve the nearest-neighbour 2x upsample of `input` (stride 1).
///
/// Equivalent to `conv2d(upsample_nearest_2x(input), ..)`; the optimized path
/// reads the low-resolution input directly instead of materializing the
/// upsampled tensor.
pub fn conv2d_upsampled(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&[f32]>,
    padding: usize,
    mode: ExecMode,
) -> Result<Tensor> {
    input.ensure_finite("conv2d input")?;
    if mode.is_naive() {
        let up = super::upsample_nearest_2x(input, mode)?;
        return conv2d(&up, weight, bias, 1, padding, mode);
    }
    let g = Geometry::new(input, weight, bias, 1, padding, true)?;
    Ok(run(&g, input.data(), weight.data(), bias, mode))
}

fn run(g: &Geometry, src: &[f32], weight: &[f32], bias: Option<&[f32]>, mode: ExecMode) -> Tensor {
    let data = if mode.is_naive() {
        naive(g, src, weight, bias)
    } else {
        optimized(g, src, weight, bias, mode.parallel())
    };
    Tensor::from_parts(vec![g.out_c, g.out_h, g.out_w], Layout::Chw, data)
}

fn naive(g: &Geometry, src: &[f32], weight: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let mut out = vec![0.0f32; g.out_c * g.out_h * g.out_w];
    for oc in 0..g.out_c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = bias.map_or(0.0, |b| b[oc] as f64);
                for ic in 0..g.in_c {
                    for ky in 0..g.k_h {
                        for kx in 0..g.k_w {
                            let y = (oy * g.stride + ky) as isize - g.pad as isize;
                            let x = (ox * g.stride + kx) as isize - g.pad as isize;
                            let w = weight[((oc * g.in_c + ic) * g.k_h + ky) * g.k_w + kx];
                            acc += w as f64 * g.fetch(src, ic, y, x) as f64;
                        }
                    }
                }
                out[(oc * g.out_h + oy) * g.out_w + ox] = acc as f32;
            }
        }
    }
    out
}

fn optimized(
    g: &Geometry,
    src: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    parallel: bool,
) -> Vec<f32> {
    let positions = g.out_h * g.out_w;
    let depth = g.in_c * g.k_h * g.k_w;
    let mut out = vec![0.0f32; g.out_c * positions];
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_exact_mut(positions).zip(b) {
            row.fill(bv);
        }
    }
    let a = MatRef::row_major(weight, g.out_c, depth);

    let direct = g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.pad == 0 && !g.up2x;
    if direct && !parallel {
        // A 1x1 convolution is a plain matrix product over the flattened image.
        let b = MatRef::row_major(src, depth, positions);
        super::gemm::gemm(1.0, a, b, 1.0, &mut out);
        return out;
    }

    let out_ptr = SharedMut(out.as_mut_ptr());
    let tile_job = |col: &mut Vec<f32>, start: usize| {
        let len = TILE.min(positions - start);
        let b = if direct {
            MatRef {
                data: &src[start..],
                rows: depth,
                cols: len,
                row_stride: positions,
                col_stride: 1,
            }
        } else {
            col.resize(depth * len, 0.0);
            im2col_tile(g, src, start, len, col);
            MatRef::row_major(col, depth, len)
        };
        let out_ptr = out_ptr;
        // SAFETY: this tile owns output columns [start, start + len) of every
        // row, which no other tile touches; the buffer outlives the scope.
        unsafe { gemm_raw(1.0, a, b, 1.0, out_ptr.0.add(start), positions, 1) };
    };

    let starts = (0..positions).step_by(TILE);
    if parallel {
        starts
            .collect::<Vec<_>>()
            .into_par_iter()
            .for_each_init(Vec::new, |col, start| tile_job(col, start));
    } else {
        let mut col = Vec::new();
        for start in starts {
            tile_job(&mut col, start);
        }
    }
    out
}

/// Fill `col` (row-major `[inC*kH*kW, len]`) with the receptive fields of
/// output positions `start..start + len`.
fn im2col_tile(g: &Geometry, src: &[f32], start: usize, len: usize, col: &mut [f32]) {
    let end = start + len;
    for ic in 0..g.in_c {
        let plane = &src[ic * g.src_h * g.src_w..(ic + 1) * g.src_h * g.src_w];
        for ky in 0..g.k_h {
            for kx in 0..g.k_w {
                let k = (ic * g.k_h + ky) * g.k_w + kx;
                let row = &mut col[k * len..(k + 1) * len];
                let (lo, hi) = g.valid_cols(kx);
                let mut p = start;
                while p < end {
                    let oy = p / g.out_w;
                    let ox0 = p % g.out_w;
                    let ox1 = (ox0 + end - p).min(g.out_w);
                    let seg = &mut row[p - start..p - start + (ox1 - ox0)];
                    let y = (oy * g.stride + ky) as isize - g.pad as isize;
                    if y < 0 || y >= g.in_h as isize {
                        seg.fill(0.0);
                    } else {
                        let sy = if g.up2x { y as usize / 2 } else { y as usize };
                        let line = &plane[sy * g.src_w..(sy + 1) * g.src_w];
                        fill_segment(g, line, kx, ox0, ox1, lo, hi, seg);
                    }
                    p += ox1 - ox0;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn fill_segment(
    g: &Geometry,
    line: &[f32],
    kx: usize,
    ox0: usize,
    ox1: usize,
    lo: usize,
    hi: usize,
    seg: &mut [f32],
) {
    let v0 = lo.clamp(ox0, ox1);
    let v1 = hi.clamp(v0, ox1);
    seg[..v0 - ox0].fill(0.0);
    seg[v1 - ox0..].fill(0.0);
    let inner = &mut seg[v0 - ox0..v1 - ox0];
    if inner.is_empty() {
        return;
    }
    // First input column for output column v0 (non-negative by construction).
    let x0 = v0 * g.stride + kx - g.pad;
    match (g.up2x, g.stride) {
        (false, 1) => inner.copy_from_slice(&line[x0..x0 + inner.len()]),
        (false, s) => {
            for (i, dst) in inner.iter_mut().enumerate() {
                *dst = line[x0 + i * s];
            }
        }
        (true, _) => {
            for (i, dst) in inner.iter_mut().enumerate() {
                *dst = line[(x0 + i * g.stride) / 2];
            }
        }
    }
}
