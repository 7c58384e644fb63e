//! CPU inference engine for lightweight latent-diffusion decoders.
//!
//! The crate decodes 4-channel latents to RGB images and videos with three
//! decoder topologies, reads and writes the binary formats they use, and
//! computes the quality metrics and loss terms used to compare them.
//!
//! Every kernel has two implementations selected by [`ExecMode`]: a naive
//! loop version accumulating in `f64`, which serves as the reference, and an
//! optimized blocked version.

mod error;

pub mod decoders;
pub mod harness;
pub mod kernels;
pub mod layers;
pub mod loss;
pub mod media;
pub mod metrics;
pub mod params;
pub mod tensor;
pub mod weights;

pub use decoders::{build_decoder, decode_image, decode_video, Arch, DecoderConfig, DecoderModel, WeightSource};
pub use error::{Error, Result};
pub use harness::{compare_report, run_bench, BenchRow, BenchSpec, ReferenceTables, Report};
pub use loss::{combine_loss, mse_loss, temporal_alignment_loss, LossComponents, LossSchedule};
pub use media::{read_embeddings, read_image_ppm, read_latent, write_image_ppm, Embeddings, FrameManifest, Latent};
pub use metrics::{aggregate, frechet_distance, gaussian_stats, psnr, ssim, GaussianStats, MetricReport};
pub use tensor::{ExecMode, Kernel, Layout, Tensor};
pub use weights::{read_container, write_container, DType, WeightContainer};
