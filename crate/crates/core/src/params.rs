//! Where layer weights come from, and how layers enumerate them.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Layout, Tensor};

/// Supplies named weight tensors while a model is being built.
///
/// Builders request every tensor exactly once, in a fixed topology order.
pub trait ParamSource {
    fn fetch(&mut self, name: &str, shape: &[usize]) -> Result<Tensor>;
}

impl<F> ParamSource for F
where
    F: FnMut(&str, &[usize]) -> Result<Tensor>,
{
    fn fetch(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        self(name, shape)
    }
}

/// Bound of the uniform initializer.
pub const INIT_BOUND: f32 = 0.05;

/// Seeded uniform initialization in `[-0.05, 0.05]`.
pub struct SeededInit {
    rng: ChaCha8Rng,
    dist: Uniform<f32>,
}

impl SeededInit {
    pub fn new(seed: u64) -> Self {
        SeededInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dist: Uniform::new_inclusive(-INIT_BOUND, INIT_BOUND).expect("valid bounds"),
        }
    }
}

impl ParamSource for SeededInit {
    fn fetch(&mut self, _name: &str, shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (&self.dist).sample_iter(&mut self.rng).take(n).collect();
        Tensor::new(shape.to_vec(), Layout::Flat, data)
    }
}

/// Every tensor filled with one value.
pub struct ConstantInit(pub f32);

impl ParamSource for ConstantInit {
    fn fetch(&mut self, _name: &str, shape: &[usize]) -> Result<Tensor> {
        Tensor::full(shape.to_vec(), Layout::Flat, self.0)
    }
}

/// Implemented by every layer that owns weights.
pub trait Module {
    /// Call `f` once per weight tensor, with its fully qualified name, in the
    /// same order the builder fetched them.
    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
