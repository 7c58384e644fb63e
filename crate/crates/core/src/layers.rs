//! Composite layers built from the tensor kernels.
//!
//! `ResidualBlock`, `MidSpatioTemporalBlock` and `UpStage` make up the tiny
//! decoders; `VaeResnetBlock` and `SpatialAttention` make up the reference VAE
//! decoder.

use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::kernels::{self, Activation};
use crate::params::{join, Module, ParamSource};
use crate::tensor::{ExecMode, Layout, Tensor};

fn fetch_checked(src: &mut dyn ParamSource, name: String, shape: &[usize]) -> Result<Tensor> {
    let t = src.fetch(&name, shape)?;
    if t.shape() != shape {
        return Err(crate::Error::ManifestMismatch(format!(
            "`{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn load(
        src: &mut dyn ParamSource,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = fetch_checked(src, join(prefix, "weight"), &[out_c, in_c, kernel, kernel])?;
        let bias = if bias {
            Some(fetch_checked(src, join(prefix, "bias"), &[out_c])?)
        } else {
            None
        };
        Ok(Conv2d {
            weight,
            bias,
            stride: 1,
            padding: kernel / 2,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        kernels::conv2d(
            x,
            &self.weight,
            self.bias.as_ref().map(|b| b.data()),
            self.stride,
            self.padding,
            mode,
        )
    }

    /// Convolution applied to the nearest-2x upsample of `x`.
    pub fn forward_upsampled(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        kernels::conv2d_upsampled(
            x,
            &self.weight,
            self.bias.as_ref().map(|b| b.data()),
            self.padding,
            mode,
        )
    }
}

impl Module for Conv2d {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    groups: usize,
    eps: f32,
    gamma: Tensor,
    beta: Tensor,
}

impl GroupNorm {
    pub fn load(src: &mut dyn ParamSource, prefix: &str, groups: usize, channels: usize, eps: f32) -> Result<Self> {
        Ok(GroupNorm {
            groups,
            eps,
            gamma: fetch_checked(src, join(prefix, "weight"), &[channels])?,
            beta: fetch_checked(src, join(prefix, "bias"), &[channels])?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        kernels::group_norm(x, self.groups, self.gamma.data(), self.beta.data(), self.eps, mode)
    }
}

impl Module for GroupNorm {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.gamma);
        f(join(prefix, "bias"), &self.beta);
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn load(src: &mut dyn ParamSource, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Linear {
            weight: fetch_checked(src, join(prefix, "weight"), &[fan_out, fan_in])?,
            bias: fetch_checked(src, join(prefix, "bias"), &[fan_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        kernels::linear(x, &self.weight, Some(self.bias.data()), mode)
    }
}

impl Module for Linear {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
}

/// A layer mapping CHW to CHW at constant spatial size.
pub trait Block: Module {
    fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor>;
}

/// Tiny-decoder residual block: three 3x3 convolutions with an activation
/// after each, plus a skip path.
///
/// `out = act(conv3(act(conv2(act(conv1(x)))))) + skip(x)`, where `skip` is
/// the identity when channel counts match and a bias-free 1x1 convolution
/// otherwise.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    convs: [Conv2d; 3],
    skip: Option<Conv2d>,
    act: Activation,
}

impl ResidualBlock {
    pub fn load(
        src: &mut dyn ParamSource,
        prefix: &str,
        channels_in: usize,
        channels_out: usize,
        act: Activation,
    ) -> Result<Self> {
        let convs = [
            Conv2d::load(src, &join(prefix, "conv1"), channels_in, channels_out, 3, true)?,
            Conv2d::load(src, &join(prefix, "conv2"), channels_out, channels_out, 3, true)?,
            Conv2d::load(src, &join(prefix, "conv3"), channels_out, channels_out, 3, true)?,
        ];
        let skip = if channels_in != channels_out {
            Some(Conv2d::load(src, &join(prefix, "skip"), channels_in, channels_out, 1, false)?)
        } else {
            None
        };
        Ok(ResidualBlock { convs, skip, act })
    }

    pub fn channels_in(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn channels_out(&self) -> usize {
        self.convs[0].out_channels()
    }

    pub fn has_skip_projection(&self) -> bool {
        self.skip.is_some()
    }
}

impl Block for ResidualBlock {
    fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let (c, _, _) = x.chw_dims()?;
        if c != self.channels_in() {
            return Err(shape_err!(
                "residual block expects {} channels, got {c}",
                self.channels_in()
            ));
        }
        let mut h = self.convs[0].forward(x, mode)?;
        h = kernels::activation_owned(h, self.act, mode);
        for conv in &self.convs[1..] {
            h = conv.forward(&h, mode)?;
            h = kernels::activation_owned(h, self.act, mode);
        }
        let shape = h.shape().to_vec();
        let mut out = h.into_data();
        match &self.skip {
            Some(skip) => {
                let s = skip.forward(x, mode)?;
                out.iter_mut().zip(s.data()).for_each(|(o, v)| *o += v);
            }
            None => out.iter_mut().zip(x.data()).for_each(|(o, v)| *o += v),
        }
        Ok(Tensor::from_parts(shape, Layout::Chw, out))
    }
}

impl Module for ResidualBlock {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.visit_params(&join(prefix, &format!("conv{}", i + 1)), f);
        }
        if let Some(skip) = &self.skip {
            skip.visit_params(&join(prefix, "skip"), f);
        }
    }
}

/// Single-head attention across the frame axis at every spatial position.
///
/// Queries and keys are learned projections of the `C`-dimensional feature
/// at a position; values are the features themselves, so a single frame
/// passes through unchanged. No positional encoding is applied, which makes
/// the layer equivariant under frame permutation.
#[derive(Debug, Clone)]
pub struct TemporalAttention {
    to_q: Linear,
    to_k: Linear,
    channels: usize,
}

impl TemporalAttention {
    pub fn load(src: &mut dyn ParamSource, prefix: &str, channels: usize) -> Result<Self> {
        Ok(TemporalAttention {
            to_q: Linear::load(src, &join(prefix, "to_q"), channels, channels)?,
            to_k: Linear::load(src, &join(prefix, "to_k"), channels, channels)?,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let (t, c, h, w) = x.tchw_dims()?;
        if c != self.channels {
            return Err(shape_err!(
                "temporal attention expects {} channels, got {c}",
                self.channels
            ));
        }
        let hw = h * w;
        let src = x.data();
        // Position-major token matrix: row p*T + f holds frame f at position p.
        let mut tokens = vec![0.0f32; hw * t * c];
        for f in 0..t {
            for ch in 0..c {
                let plane = &src[(f * c + ch) * hw..(f * c + ch + 1) * hw];
                for (p, &v) in plane.iter().enumerate() {
                    tokens[(p * t + f) * c + ch] = v;
                }
            }
        }
        let tokens = Tensor::from_parts(vec![hw * t, c], Layout::Flat, tokens);
        let q = self.to_q.forward(&tokens, mode)?;
        let k = self.to_k.forward(&tokens, mode)?;

        let block = t * c;
        let per_position = |p: usize, dst: &mut [f32]| -> Result<()> {
            let slice = |m: &Tensor| {
                Tensor::from_parts(vec![t, c], Layout::Flat, m.data()[p * block..(p + 1) * block].to_vec())
            };
            let o = kernels::attention(&slice(&q), &slice(&k), &slice(&tokens), None, mode)?;
            dst.copy_from_slice(o.data());
            Ok(())
        };
        let mut mixed = vec![0.0f32; hw * block];
        if mode.parallel() {
            mixed
                .par_chunks_mut(block)
                .enumerate()
                .try_for_each(|(p, dst)| per_position(p, dst))?;
        } else {
            for (p, dst) in mixed.chunks_mut(block).enumerate() {
                per_position(p, dst)?;
            }
        }

        let mut out = vec![0.0f32; x.numel()];
        for f in 0..t {
            for ch in 0..c {
                let plane = &mut out[(f * c + ch) * hw..(f * c + ch + 1) * hw];
                for (p, v) in plane.iter_mut().enumerate() {
                    *v = mixed[(p * t + f) * c + ch];
                }
            }
        }
        Ok(Tensor::from_parts(vec![t, c, h, w], Layout::Tchw, out))
    }
}

impl Module for TemporalAttention {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.to_q.visit_params(&join(prefix, "to_q"), f);
        self.to_k.visit_params(&join(prefix, "to_k"), f);
    }
}

fn per_frame(x: &Tensor, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let (t, _, _, _) = x.tchw_dims()?;
    let frames = (0..t)
        .map(|i| f(&x.frame(i)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack_frames(&frames)
}

/// Residual block, temporal attention across frames, residual block.
#[derive(Debug, Clone)]
pub struct MidSpatioTemporalBlock {
    spatial_pre: ResidualBlock,
    temporal: TemporalAttention,
    spatial_post: ResidualBlock,
}

impl MidSpatioTemporalBlock {
    pub fn load(src: &mut dyn ParamSource, prefix: &str, channels: usize, act: Activation) -> Result<Self> {
        Ok(MidSpatioTemporalBlock {
            spatial_pre: ResidualBlock::load(src, &join(prefix, "spatial_pre"), channels, channels, act)?,
            temporal: TemporalAttention::load(src, &join(prefix, "temporal"), channels)?,
            spatial_post: ResidualBlock::load(src, &join(prefix, "spatial_post"), channels, channels, act)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let h = per_frame(x, |f| self.spatial_pre.forward(f, mode))?;
        let h = self.temporal.forward(&h, mode)?;
        per_frame(&h, |f| self.spatial_post.forward(f, mode))
    }

    /// The spatial half of the block on one CHW frame, with no temporal mixing.
    pub fn forward_spatial(&self, frame: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let h = self.spatial_pre.forward(frame, mode)?;
        self.spatial_post.forward(&h, mode)
    }

    pub fn spatial_pre(&self) -> &ResidualBlock {
        &self.spatial_pre
    }

    pub fn spatial_post(&self) -> &ResidualBlock {
        &self.spatial_post
    }

    pub fn temporal(&self) -> &TemporalAttention {
        &self.temporal
    }
}

impl Module for MidSpatioTemporalBlock {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.spatial_pre.visit_params(&join(prefix, "spatial_pre"), f);
        self.temporal.visit_params(&join(prefix, "temporal"), f);
        self.spatial_post.visit_params(&join(prefix, "spatial_post"), f);
    }
}

/// A run of blocks followed by nearest-2x upsampling and a 3x3 convolution.
#[derive(Debug, Clone)]
pub struct UpStage<B> {
    blocks: Vec<B>,
    upsample: Conv2d,
}

impl<B: Block> UpStage<B> {
    pub fn new(blocks: Vec<B>, upsample: Conv2d) -> Self {
        UpStage { blocks, upsample }
    }

    pub fn blocks(&self) -> &[B] {
        &self.blocks
    }

    pub fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let mut h = run_blocks(&self.blocks, x, mode)?;
        h = self.upsample.forward_upsampled(&h, mode)?;
        Ok(h)
    }
}

impl<B: Block> Module for UpStage<B> {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("blocks.{i}")), f);
        }
        self.upsample.visit_params(&join(prefix, "upsample"), f);
    }
}

pub(crate) fn run_blocks<B: Block>(blocks: &[B], x: &Tensor, mode: ExecMode) -> Result<Tensor> {
    let mut iter = blocks.iter();
    let Some(first) = iter.next() else {
        return Ok(x.clone());
    };
    let mut h = first.forward(x, mode)?;
    for b in iter {
        h = b.forward(&h, mode)?;
    }
    Ok(h)
}

/// Reference-VAE residual block:
/// `conv2(silu(gn2(conv1(silu(gn1(x)))))) + shortcut(x)`.
#[derive(Debug, Clone)]
pub struct VaeResnetBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

/// Group count and epsilon of every reference-VAE normalization.
pub const VAE_NORM_GROUPS: usize = 32;
pub const VAE_NORM_EPS: f32 = 1e-6;

impl VaeResnetBlock {
    pub fn load(src: &mut dyn ParamSource, prefix: &str, channels_in: usize, channels_out: usize) -> Result<Self> {
        let norm = |src: &mut dyn ParamSource, name: &str, c| {
            GroupNorm::load(src, &join(prefix, name), VAE_NORM_GROUPS, c, VAE_NORM_EPS)
        };
        Ok(VaeResnetBlock {
            norm1: norm(src, "norm1", channels_in)?,
            conv1: Conv2d::load(src, &join(prefix, "conv1"), channels_in, channels_out, 3, true)?,
            norm2: norm(src, "norm2", channels_out)?,
            conv2: Conv2d::load(src, &join(prefix, "conv2"), channels_out, channels_out, 3, true)?,
            shortcut: if channels_in != channels_out {
                Some(Conv2d::load(src, &join(prefix, "shortcut"), channels_in, channels_out, 1, true)?)
            } else {
                None
            },
        })
    }
}

impl Block for VaeResnetBlock {
    fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let h = kernels::activation_owned(self.norm1.forward(x, mode)?, Activation::Silu, mode);
        let h = self.conv1.forward(&h, mode)?;
        let h = kernels::activation_owned(self.norm2.forward(&h, mode)?, Activation::Silu, mode);
        let h = self.conv2.forward(&h, mode)?;
        let shape = h.shape().to_vec();
        let mut out = h.into_data();
        match &self.shortcut {
            Some(s) => {
                let s = s.forward(x, mode)?;
                out.iter_mut().zip(s.data()).for_each(|(o, v)| *o += v);
            }
            None => out.iter_mut().zip(x.data()).for_each(|(o, v)| *o += v),
        }
        Ok(Tensor::from_parts(shape, Layout::Chw, out))
    }
}

impl Module for VaeResnetBlock {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.norm1.visit_params(&join(prefix, "norm1"), f);
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.norm2.visit_params(&join(prefix, "norm2"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        if let Some(s) = &self.shortcut {
            s.visit_params(&join(prefix, "shortcut"), f);
        }
    }
}

/// Single-head self-attention over all spatial positions, with residual.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    norm: GroupNorm,
    to_q: Linear,
    to_k: Linear,
    to_v: Linear,
    proj: Linear,
}

impl SpatialAttention {
    pub fn load(src: &mut dyn ParamSource, prefix: &str, channels: usize) -> Result<Self> {
        Ok(SpatialAttention {
            norm: GroupNorm::load(src, &join(prefix, "norm"), VAE_NORM_GROUPS, channels, VAE_NORM_EPS)?,
            to_q: Linear::load(src, &join(prefix, "to_q"), channels, channels)?,
            to_k: Linear::load(src, &join(prefix, "to_k"), channels, channels)?,
            to_v: Linear::load(src, &join(prefix, "to_v"), channels, channels)?,
            proj: Linear::load(src, &join(prefix, "proj"), channels, channels)?,
        })
    }
}

fn transpose(src: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; src.len()];
    for (r, line) in src.chunks_exact(cols).enumerate() {
        for (c, &v) in line.iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
    out
}

impl Block for SpatialAttention {
    fn forward(&self, x: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let (c, h, w) = x.chw_dims()?;
        let hw = h * w;
        let normed = self.norm.forward(x, mode)?;
        let tokens = Tensor::from_parts(vec![hw, c], Layout::Flat, transpose(normed.data(), c, hw));
        drop(normed);
        let q = self.to_q.forward(&tokens, mode)?;
        let k = self.to_k.forward(&tokens, mode)?;
        let v = self.to_v.forward(&tokens, mode)?;
        drop(tokens);
        let a = kernels::attention(&q, &k, &v, None, mode)?;
        let o = self.proj.forward(&a, mode)?;
        let mut out = transpose(o.data(), hw, c);
        out.iter_mut().zip(x.data()).for_each(|(o, v)| *o += v);
        Ok(Tensor::from_parts(vec![c, h, w], Layout::Chw, out))
    }
}

impl Module for SpatialAttention {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.norm.visit_params(&join(prefix, "norm"), f);
        self.to_q.visit_params(&join(prefix, "to_q"), f);
        self.to_k.visit_params(&join(prefix, "to_k"), f);
        self.to_v.visit_params(&join(prefix, "to_v"), f);
        self.proj.visit_params(&join(prefix, "proj"), f);
    }
}
