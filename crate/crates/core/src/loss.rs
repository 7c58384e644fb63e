//! Forward evaluation of the composite reconstruction objective
//!
//! ```text
//! L = α·L_MSE + β·L_LPIPS + γ·L_GAN·Θ(t − t0)
//! ```
//!
//! plus a temporal alignment term for video. LPIPS and adversarial values are
//! computed elsewhere and enter as scalars.
//!
//! The temporal alignment term is defined here as the mean squared error
//! between consecutive-frame differences of prediction and target:
//!
//! ```text
//! L_TAE = mean over t, c, y, x of ((p[t+1] − p[t]) − (g[t+1] − g[t]))²
//! ```
//!
//! averaged over all `(T − 1)·C·H·W` elements. It is zero whenever the
//! prediction differs from the target by a constant over time.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::metrics;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub t0: u64,
}

impl Default for LossSchedule {
    fn default() -> Self {
        LossSchedule {
            alpha: 1.0,
            beta: 0.4,
            gamma: 0.8,
            t0: 10_000,
        }
    }
}

impl LossSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub mse: f64,
    pub lpips: f64,
    pub gan: f64,
}

impl LossComponents {
    pub fn new(mse: f64, lpips: f64, gan: f64) -> Self {
        LossComponents { mse, lpips, gan }
    }
}

/// The weighted, gated terms of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub mse: f64,
    pub lpips: f64,
    pub gan: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.mse + self.lpips + self.gan
    }
}

/// Θ(x): 1 for x ≥ 0, else 0.
pub fn heaviside(x: i64) -> f64 {
    if x >= 0 {
        1.0
    } else {
        0.0
    }
}

pub fn combine_loss_terms(c: &LossComponents, step: u64, s: &LossSchedule) -> LossTerms {
    let gate = heaviside(step as i64 - s.t0 as i64);
    LossTerms {
        mse: s.alpha * c.mse,
        lpips: s.beta * c.lpips,
        gan: s.gamma * c.gan * gate,
    }
}

pub fn combine_loss(c: &LossComponents, step: u64, s: &LossSchedule) -> f64 {
    combine_loss_terms(c, step, s).total()
}

pub fn mse_loss(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(shape_err!("{:?} vs {:?}", x.shape(), y.shape()));
    }
    metrics::mse(x.data(), y.data())
}

/// Frame-difference MSE between two `[T, C, H, W]` videos, `T ≥ 2`.
pub fn temporal_alignment_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(shape_err!("{:?} vs {:?}", pred.shape(), target.shape()));
    }
    let (t, c, h, w) = pred.tchw_dims()?;
    if t < 2 {
        return Err(Error::TooFewFrames(t));
    }
    let frame = c * h * w;
    let (p, g) = (pred.data(), target.data());
    let mut sum = 0f64;
    for i in 0..(t - 1) * frame {
        let dp = p[i + frame] as f64 - p[i] as f64;
        let dg = g[i + frame] as f64 - g[i] as f64;
        let e = dp - dg;
        sum += e * e;
    }
    Ok(sum / ((t - 1) * frame) as f64)
}
