//! Numeric micro-kernels. Each has a naive reference path and an optimized
//! path selected through [`ExecMode`](crate::ExecMode).

mod activation;
mod attention;
mod conv;
pub(crate) mod gemm;
mod linear;
mod norm;
mod upsample;

pub use activation::{activation, activation_owned, Activation};
pub use attention::{attention, attention_probs};
pub use conv::{conv2d, conv2d_upsampled};
pub use linear::linear;
pub use norm::group_norm;
pub use upsample::upsample_nearest_2x;
