//! Elementwise activations.

use rayon::prelude::*;

use crate::tensor::{ExecMode, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * (1.0 / (1.0 + (-x).exp())),
        }
    }
}

const CHUNK: usize = 1 << 14;

pub fn activation(x: &Tensor, kind: Activation, mode: ExecMode) -> Tensor {
    activation_owned(x.clone(), kind, mode)
}

/// In-place variant that reuses the input buffer.
pub fn activation_owned(x: Tensor, kind: Activation, mode: ExecMode) -> Tensor {
    let shape = x.shape().to_vec();
    let layout = x.layout();
    let mut data = x.into_data();
    if mode.is_naive() {
        for v in data.iter_mut() {
            *v = kind.apply(*v);
        }
    } else {
        let run = |chunk: &mut [f32]| match kind {
            Activation::Relu => chunk.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Silu => chunk
                .iter_mut()
                .for_each(|v| *v *= 1.0 / (1.0 + (-*v).exp())),
        };
        if mode.parallel() {
            data.par_chunks_mut(CHUNK).for_each(run);
        } else {
            data.chunks_mut(CHUNK).for_each(run);
        }
    }
    Tensor::from_parts(shape, layout, data)
}
