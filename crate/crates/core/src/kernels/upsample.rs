use crate::error::Result;
use crate::tensor::{ExecMode, Layout, Tensor};

/// Nearest-neighbour 2x spatial upsampling of a CHW tensor.
pub fn upsample_nearest_2x(x: &Tensor, mode: ExecMode) -> Result<Tensor> {
    let (c, h, w) = x.chw_dims()?;
    let (oh, ow) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![0.0f32; c * oh * ow];
    if mode.is_naive() {
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ch * oh + y) * ow + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
    } else {
        for (dst, line) in out.chunks_exact_mut(2 * ow).zip(src.chunks_exact(w)) {
            let (top, bottom) = dst.split_at_mut(ow);
            for (pair, &v) in top.chunks_exact_mut(2).zip(line) {
                pair[0] = v;
                pair[1] = v;
            }
            bottom.copy_from_slice(top);
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], Layout::Chw, out))
}
