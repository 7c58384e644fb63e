//! The three decoder topologies: the reference VAE decoder, TAE-192 and
//! TAE-192 Temporal.
//!
//! TAE-192 layer stack (width `base_channels`, 192 by default):
//!
//! ```text
//! conv_in 3x3 4->192
//! [3 x ResidualBlock -> nearest 2x -> conv 3x3] x 3 stages   (x8 total)
//! conv_out 3x3 192->3 -> clamp [0, 1]
//! ```
//!
//! The temporal variant inserts a [`MidSpatioTemporalBlock`] right after
//! `conv_in`. The reference decoder follows the usual latent-diffusion VAE
//! decoder: `conv_in` 4->512, a resnet/attention/resnet mid block, four
//! tiers of three resnet blocks at widths 512/512/256/128 with an upsample
//! after the first three, then group norm, SiLU and `conv_out` ->3.

use std::fmt;
use std::str::FromStr;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, Activation};
use crate::layers::{
    run_blocks, Block, Conv2d, GroupNorm, MidSpatioTemporalBlock, ResidualBlock, SpatialAttention,
    UpStage, VaeResnetBlock, VAE_NORM_EPS, VAE_NORM_GROUPS,
};
use crate::params::{join, Module, ParamSource, SeededInit};
use crate::tensor::{ExecMode, Layout, Tensor};
use crate::weights::{ContainerSource, WeightContainer};

/// Channels of every latent this engine decodes.
pub const LATENT_CHANNELS: usize = 4;
/// Spatial upsampling from latent to pixels.
pub const UPSCALE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    RefVae,
    Tae192,
    Tae192Temporal,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::RefVae, Arch::Tae192, Arch::Tae192Temporal];

    /// Identifier used on the command line and in weight containers.
    pub fn id(self) -> &'static str {
        match self {
            Arch::RefVae => "refvae",
            Arch::Tae192 => "tae192",
            Arch::Tae192Temporal => "tae192t",
        }
    }

    pub fn is_temporal(self) -> bool {
        self == Arch::Tae192Temporal
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| Error::UnsupportedArch(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub arch: Arch,
    pub latent_channels: usize,
    /// Constant width of the tiny decoders, or the peak (first-tier) width of
    /// the reference decoder.
    pub base_channels: usize,
    /// Up-stages (tiny decoders) or channel tiers (reference decoder).
    pub stages: usize,
    /// Latents are divided by this before decoding.
    pub latent_scale: f32,
}

impl DecoderConfig {
    pub fn new(arch: Arch) -> Self {
        let (base_channels, stages) = match arch {
            Arch::RefVae => (512, 4),
            Arch::Tae192 | Arch::Tae192Temporal => (192, 3),
        };
        DecoderConfig {
            arch,
            latent_channels: LATENT_CHANNELS,
            base_channels,
            stages,
            latent_scale: 1.0,
        }
    }

    /// Same topology at a different width; handy for fast tests.
    pub fn with_base_channels(mut self, channels: usize) -> Self {
        self.base_channels = channels;
        self
    }

    pub fn with_latent_scale(mut self, scale: f32) -> Self {
        self.latent_scale = scale;
        self
    }

    /// Channel widths of the reference decoder's four tiers.
    pub fn ref_tiers(&self) -> [usize; 4] {
        let b = self.base_channels;
        [b, b, b / 2, b / 4]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.latent_channels != LATENT_CHANNELS {
            return bad(format!("latent_channels must be 4, got {}", self.latent_channels));
        }
        if !(self.latent_scale.is_finite() && self.latent_scale != 0.0) {
            return bad(format!("latent_scale must be finite and non-zero, got {}", self.latent_scale));
        }
        match self.arch {
            Arch::RefVae => {
                // Three 2x upsamples between four tiers.
                if self.stages != 4 {
                    return bad(format!("the reference decoder has 4 tiers, got {}", self.stages));
                }
                if self.base_channels == 0 || self.base_channels % (4 * VAE_NORM_GROUPS) != 0 {
                    return bad(format!(
                        "reference width must be a positive multiple of {}, got {}",
                        4 * VAE_NORM_GROUPS,
                        self.base_channels
                    ));
                }
            }
            Arch::Tae192 | Arch::Tae192Temporal => {
                if 1usize << self.stages != UPSCALE {
                    return bad(format!("tiny decoders need 3 up-stages for x8, got {}", self.stages));
                }
                if self.base_channels == 0 {
                    return bad("base_channels must be positive".into());
                }
            }
        }
        Ok(())
    }
}

const TAE_BLOCKS_PER_STAGE: usize = 3;
const REF_BLOCKS_PER_TIER: usize = 3;

#[derive(Debug, Clone)]
struct TaeNet {
    conv_in: Conv2d,
    mid: Option<MidSpatioTemporalBlock>,
    stages: Vec<UpStage<ResidualBlock>>,
    conv_out: Conv2d,
}

impl TaeNet {
    fn load(cfg: &DecoderConfig, src: &mut dyn ParamSource) -> Result<Self> {
        let c = cfg.base_channels;
        let act = Activation::Relu;
        let conv_in = Conv2d::load(src, "conv_in", LATENT_CHANNELS, c, 3, true)?;
        let mid = if cfg.arch.is_temporal() {
            Some(MidSpatioTemporalBlock::load(src, "mid", c, act)?)
        } else {
            None
        };
        let mut stages = Vec::with_capacity(cfg.stages);
        for s in 0..cfg.stages {
            let prefix = format!("stages.{s}");
            let blocks = (0..TAE_BLOCKS_PER_STAGE)
                .map(|b| ResidualBlock::load(src, &join(&prefix, &format!("blocks.{b}")), c, c, act))
                .collect::<Result<Vec<_>>>()?;
            let up = Conv2d::load(src, &join(&prefix, "upsample"), c, c, 3, true)?;
            stages.push(UpStage::new(blocks, up));
        }
        let conv_out = Conv2d::load(src, "conv_out", c, 3, 3, true)?;
        Ok(TaeNet {
            conv_in,
            mid,
            stages,
            conv_out,
        })
    }

    fn tail(&self, mut h: Tensor, mode: ExecMode) -> Result<Tensor> {
        for stage in &self.stages {
            h = stage.forward(&h, mode)?;
        }
        self.conv_out.forward(&h, mode)
    }

    /// Spatial-only path for one frame; skips temporal mixing if present.
    fn forward_frame(&self, latent: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let mut h = self.conv_in.forward(latent, mode)?;
        if let Some(mid) = &self.mid {
            h = mid.forward_spatial(&h, mode)?;
        }
        self.tail(h, mode)
    }

    fn forward_video(&self, latents: &Tensor, mode: ExecMode) -> Result<Vec<Tensor>> {
        let (t, _, _, _) = latents.tchw_dims()?;
        let Some(mid) = &self.mid else {
            return (0..t)
                .map(|i| self.forward_frame(&latents.frame(i)?, mode))
                .collect();
        };
        let stems = (0..t)
            .map(|i| self.conv_in.forward(&latents.frame(i)?, mode))
            .collect::<Result<Vec<_>>>()?;
        let mixed = mid.forward(&Tensor::stack_frames(&stems)?, mode)?;
        drop(stems);
        (0..t).map(|i| self.tail(mixed.frame(i)?, mode)).collect()
    }
}

impl Module for TaeNet {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv_in.visit_params(&join(prefix, "conv_in"), f);
        if let Some(mid) = &self.mid {
            mid.visit_params(&join(prefix, "mid"), f);
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("stages.{i}")), f);
        }
        self.conv_out.visit_params(&join(prefix, "conv_out"), f);
    }
}

#[derive(Debug, Clone)]
struct RefVaeNet {
    conv_in: Conv2d,
    mid_block1: VaeResnetBlock,
    mid_attn: SpatialAttention,
    mid_block2: VaeResnetBlock,
    up: Vec<UpStage<VaeResnetBlock>>,
    last: Vec<VaeResnetBlock>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
}

impl RefVaeNet {
    fn load(cfg: &DecoderConfig, src: &mut dyn ParamSource) -> Result<Self> {
        let tiers = cfg.ref_tiers();
        let peak = tiers[0];
        let conv_in = Conv2d::load(src, "conv_in", LATENT_CHANNELS, peak, 3, true)?;
        let mid_block1 = VaeResnetBlock::load(src, "mid.block1", peak, peak)?;
        let mid_attn = SpatialAttention::load(src, "mid.attn", peak)?;
        let mid_block2 = VaeResnetBlock::load(src, "mid.block2", peak, peak)?;

        let mut channels = peak;
        let mut load_tier = |src: &mut dyn ParamSource, i: usize, width: usize| -> Result<Vec<VaeResnetBlock>> {
            (0..REF_BLOCKS_PER_TIER)
                .map(|b| {
                    let block = VaeResnetBlock::load(src, &format!("up.{i}.blocks.{b}"), channels, width);
                    channels = width;
                    block
                })
                .collect()
        };
        let mut up = Vec::with_capacity(3);
        for (i, &width) in tiers[..3].iter().enumerate() {
            let blocks = load_tier(src, i, width)?;
            let conv = Conv2d::load(src, &format!("up.{i}.upsample"), width, width, 3, true)?;
            up.push(UpStage::new(blocks, conv));
        }
        let last = load_tier(src, 3, tiers[3])?;
        let norm_out = GroupNorm::load(src, "norm_out", VAE_NORM_GROUPS, tiers[3], VAE_NORM_EPS)?;
        let conv_out = Conv2d::load(src, "conv_out", tiers[3], 3, 3, true)?;
        Ok(RefVaeNet {
            conv_in,
            mid_block1,
            mid_attn,
            mid_block2,
            up,
            last,
            norm_out,
            conv_out,
        })
    }

    fn forward(&self, latent: &Tensor, mode: ExecMode) -> Result<Tensor> {
        let mut h = self.conv_in.forward(latent, mode)?;
        h = self.mid_block1.forward(&h, mode)?;
        h = self.mid_attn.forward(&h, mode)?;
        h = self.mid_block2.forward(&h, mode)?;
        for stage in &self.up {
            h = stage.forward(&h, mode)?;
        }
        h = run_blocks(&self.last, &h, mode)?;
        h = self.norm_out.forward(&h, mode)?;
        h = kernels::activation_owned(h, Activation::Silu, mode);
        self.conv_out.forward(&h, mode)
    }
}

impl Module for RefVaeNet {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv_in.visit_params(&join(prefix, "conv_in"), f);
        self.mid_block1.visit_params(&join(prefix, "mid.block1"), f);
        self.mid_attn.visit_params(&join(prefix, "mid.attn"), f);
        self.mid_block2.visit_params(&join(prefix, "mid.block2"), f);
        for (i, s) in self.up.iter().enumerate() {
            s.visit_params(&join(prefix, &format!("up.{i}")), f);
        }
        for (b, block) in self.last.iter().enumerate() {
            block.visit_params(&join(prefix, &format!("up.3.blocks.{b}")), f);
        }
        self.norm_out.visit_params(&join(prefix, "norm_out"), f);
        self.conv_out.visit_params(&join(prefix, "conv_out"), f);
    }
}

#[derive(Debug, Clone)]
enum Network {
    RefVae(RefVaeNet),
    Tae(TaeNet),
}

/// Where [`build_decoder`] takes weights from.
pub enum WeightSource<'a> {
    Container(&'a WeightContainer),
    /// Seeded uniform initialization in `[-0.05, 0.05]`.
    Seed(u64),
}

/// An immutable decoder: topology plus bound weights.
#[derive(Debug, Clone)]
pub struct DecoderModel {
    config: DecoderConfig,
    net: Network,
    param_count: usize,
}

/// Build a decoder from a weight container or a random seed.
pub fn build_decoder(config: DecoderConfig, weights: WeightSource<'_>) -> Result<DecoderModel> {
    match weights {
        WeightSource::Seed(seed) => DecoderModel::build(config, &mut SeededInit::new(seed)),
        WeightSource::Container(container) => {
            if container.arch() != config.arch.id() {
                return Err(Error::ManifestMismatch(format!(
                    "container holds `{}` weights, expected `{}`",
                    container.arch(),
                    config.arch.id()
                )));
            }
            let mut src = ContainerSource::new(container);
            let model = DecoderModel::build(config, &mut src)?;
            src.finish()?;
            Ok(model)
        }
    }
}

impl DecoderModel {
    /// Build from an arbitrary parameter source.
    pub fn build(config: DecoderConfig, src: &mut dyn ParamSource) -> Result<Self> {
        config.validate()?;
        let net = match config.arch {
            Arch::RefVae => Network::RefVae(RefVaeNet::load(&config, src)?),
            Arch::Tae192 | Arch::Tae192Temporal => Network::Tae(TaeNet::load(&config, src)?),
        };
        let mut model = DecoderModel {
            config,
            net,
            param_count: 0,
        };
        model.param_count = Module::param_count(&model);
        Ok(model)
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn weight_bytes_f16(&self) -> usize {
        2 * self.param_count
    }

    /// All weights with their qualified names, in manifest order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |n, t| out.push((n, t)));
        out
    }

    fn ingest(&self, latent: &Tensor) -> Result<Tensor> {
        latent.ensure_finite("latent")?;
        let s = self.config.latent_scale;
        if s == 1.0 {
            return Ok(latent.clone());
        }
        let data = latent.data().iter().map(|v| v / s).collect();
        Ok(Tensor::from_parts(latent.shape().to_vec(), latent.layout(), data))
    }

    fn check_latent_frame(c: usize) -> Result<()> {
        if c != LATENT_CHANNELS {
            return Err(shape_err!("latents have 4 channels, got {c}"));
        }
        Ok(())
    }

    /// Decode one `[4, h, w]` latent to a `[3, 8h, 8w]` image in `[0, 1]`.
    pub fn decode_image(&self, latent: &Tensor, mode: ExecMode) -> Result<Tensor> {
        if self.arch().is_temporal() {
            return Err(Error::ArchMismatch(
                "the temporal decoder decodes frame sequences; use decode_video".into(),
            ));
        }
        let (c, _, _) = latent.chw_dims()?;
        Self::check_latent_frame(c)?;
        let latent = self.ingest(latent)?;
        let raw = match &self.net {
            Network::RefVae(net) => net.forward(&latent, mode)?,
            Network::Tae(net) => net.forward_frame(&latent, mode)?,
        };
        Ok(clamp_unit(raw))
    }

    /// Decode `[T, 4, h, w]` latents to `[T, 3, 8h, 8w]` frames.
    ///
    /// The temporal decoder mixes information across frames in its mid
    /// block; the other decoders process frames independently.
    pub fn decode_video(&self, latents: &Tensor, mode: ExecMode) -> Result<Tensor> {
        self.decode_frames(latents, mode, true)
    }

    /// Frame-by-frame decode with temporal mixing disabled. For the temporal
    /// decoder this runs only the spatial halves of its mid block.
    pub fn decode_video_framewise(&self, latents: &Tensor, mode: ExecMode) -> Result<Tensor> {
        self.decode_frames(latents, mode, false)
    }

    fn decode_frames(&self, latents: &Tensor, mode: ExecMode, temporal: bool) -> Result<Tensor> {
        let (_, c, _, _) = latents.tchw_dims().map_err(|_| {
            Error::ArchMismatch(format!(
                "video decoding needs TCHW latents, got {:?} {:?}",
                latents.layout(),
                latents.shape()
            ))
        })?;
        Self::check_latent_frame(c)?;
        let latents = self.ingest(latents)?;
        let (t, _, _, _) = latents.tchw_dims()?;
        let frames = match &self.net {
            Network::Tae(net) if temporal => net.forward_video(&latents, mode)?,
            Network::Tae(net) => (0..t)
                .map(|i| net.forward_frame(&latents.frame(i)?, mode))
                .collect::<Result<_>>()?,
            Network::RefVae(net) => (0..t)
                .map(|i| net.forward(&latents.frame(i)?, mode))
                .collect::<Result<_>>()?,
        };
        let frames: Vec<Tensor> = frames.into_iter().map(clamp_unit).collect();
        Tensor::stack_frames(&frames)
    }
}

impl Module for DecoderModel {
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        match &self.net {
            Network::RefVae(net) => net.visit_params(prefix, f),
            Network::Tae(net) => net.visit_params(prefix, f),
        }
    }
}

fn clamp_unit(t: Tensor) -> Tensor {
    let shape = t.shape().to_vec();
    let mut data = t.into_data();
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::from_parts(shape, Layout::Chw, data)
}

/// Free-function form of [`DecoderModel::decode_image`].
pub fn decode_image(model: &DecoderModel, latent: &Tensor, mode: ExecMode) -> Result<Tensor> {
    model.decode_image(latent, mode)
}

/// Free-function form of [`DecoderModel::decode_video`].
pub fn decode_video(model: &DecoderModel, latents: &Tensor, mode: ExecMode) -> Result<Tensor> {
    model.decode_video(latents, mode)
}
