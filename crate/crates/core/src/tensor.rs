//! Dense row-major `f32` tensors and execution-mode flags.

use std::fmt;

use crate::error::{shape_err, Error, Result};

/// Axis interpretation attached to a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// Channels, height, width.
    Chw,
    /// Frames, channels, height, width.
    Tchw,
    /// Any rank; no axis semantics (weights, matrices, vectors).
    Flat,
}

impl Layout {
    fn rank(self) -> Option<usize> {
        match self {
            Layout::Chw => Some(3),
            Layout::Tchw => Some(4),
            Layout::Flat => None,
        }
    }
}

/// Which kernel implementation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    /// Straightforward loops; the reference every optimized path is checked against.
    Naive,
    /// Blocked GEMM-backed kernels, optionally data-parallel.
    Optimized,
}

/// Kernel choice plus the determinism switch.
///
/// Naive mode is always deterministic. Deterministic optimized mode runs every
/// kernel sequentially on the calling thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExecMode {
    kernel: Kernel,
    deterministic: bool,
}

impl ExecMode {
    pub const fn naive() -> Self {
        ExecMode {
            kernel: Kernel::Naive,
            deterministic: true,
        }
    }

    pub const fn optimized() -> Self {
        ExecMode {
            kernel: Kernel::Optimized,
            deterministic: false,
        }
    }

    pub const fn optimized_deterministic() -> Self {
        ExecMode {
            kernel: Kernel::Optimized,
            deterministic: true,
        }
    }

    pub fn new(kernel: Kernel, deterministic: bool) -> Self {
        ExecMode {
            kernel,
            deterministic: deterministic || kernel == Kernel::Naive,
        }
    }

    pub fn kernel(self) -> Kernel {
        self.kernel
    }

    pub fn is_naive(self) -> bool {
        self.kernel == Kernel::Naive
    }

    pub fn is_deterministic(self) -> bool {
        self.deterministic
    }

    /// Whether kernels may fan out over the rayon pool.
    pub(crate) fn parallel(self) -> bool {
        !self.deterministic
    }
}

impl Default for ExecMode {
    fn default() -> Self {
        ExecMode::optimized()
    }
}

/// Dense tensor of `f32` values, row-major with the last axis fastest.
///
/// Tensors are immutable once built; kernels produce new tensors.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    layout: Layout,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("layout", &self.layout)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, layout: Layout, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() {
            return Err(shape_err!("tensor shape must have at least one axis"));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(shape_err!("zero-sized axis in shape {shape:?}"));
        }
        if let Some(rank) = layout.rank() {
            if rank != shape.len() {
                return Err(shape_err!(
                    "layout {layout:?} needs {rank} axes, shape {shape:?} has {}",
                    shape.len()
                ));
            }
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            ));
        }
        Ok(Tensor {
            shape,
            layout,
            data,
        })
    }

    pub fn full(shape: impl Into<Vec<usize>>, layout: Layout, value: f32) -> Result<Self> {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor::new(shape, layout, vec![value; numel])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>, layout: Layout) -> Result<Self> {
        Tensor::full(shape, layout, 0.0)
    }

    pub fn chw(c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![c, h, w], Layout::Chw, data)
    }

    pub fn tchw(t: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![t, c, h, w], Layout::Tchw, data)
    }

    pub fn flat(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(shape, Layout::Flat, data)
    }

    /// Build a tensor whose shape is already known to be consistent.
    pub(crate) fn from_parts(shape: Vec<usize>, layout: Layout, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            layout,
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Same data, different shape and layout.
    pub fn reshape(self, shape: impl Into<Vec<usize>>, layout: Layout) -> Result<Self> {
        Tensor::new(shape, layout, self.data)
    }

    /// `(C, H, W)` of a CHW tensor.
    pub fn chw_dims(&self) -> Result<(usize, usize, usize)> {
        match (self.layout, self.shape.as_slice()) {
            (Layout::Chw, &[c, h, w]) => Ok((c, h, w)),
            _ => Err(shape_err!(
                "expected a CHW tensor, got {:?} {:?}",
                self.layout,
                self.shape
            )),
        }
    }

    /// `(T, C, H, W)` of a TCHW tensor.
    pub fn tchw_dims(&self) -> Result<(usize, usize, usize, usize)> {
        match (self.layout, self.shape.as_slice()) {
            (Layout::Tchw, &[t, c, h, w]) => Ok((t, c, h, w)),
            _ => Err(shape_err!(
                "expected a TCHW tensor, got {:?} {:?}",
                self.layout,
                self.shape
            )),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(shape_err!("expected a rank-2 tensor, got {:?}", self.shape)),
        }
    }

    /// Copy of frame `t` of a TCHW tensor, as CHW.
    pub fn frame(&self, t: usize) -> Result<Tensor> {
        let (frames, c, h, w) = self.tchw_dims()?;
        if t >= frames {
            return Err(shape_err!("frame {t} out of range for {frames} frames"));
        }
        let len = c * h * w;
        Ok(Tensor::from_parts(
            vec![c, h, w],
            Layout::Chw,
            self.data[t * len..(t + 1) * len].to_vec(),
        ))
    }

    /// Stack equally-shaped CHW frames into one TCHW tensor.
    pub fn stack_frames(frames: &[Tensor]) -> Result<Tensor> {
        let first = frames.first().ok_or(Error::EmptyInput)?;
        let (c, h, w) = first.chw_dims()?;
        let mut data = Vec::with_capacity(frames.len() * first.numel());
        for f in frames {
            if f.chw_dims()? != (c, h, w) {
                return Err(shape_err!(
                    "frame shape {:?} differs from {:?}",
                    f.shape(),
                    first.shape()
                ));
            }
            data.extend_from_slice(&f.data);
        }
        Ok(Tensor::from_parts(
            vec![frames.len(), c, h, w],
            Layout::Tchw,
            data,
        ))
    }

    /// Error if any element is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Validation(format!(
                "{what} contains non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    /// Order-sensitive 64-bit FNV-1a digest of the raw bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            for b in v.to_bits().to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }
}
