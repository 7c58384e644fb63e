//! Image quality metrics and Fréchet distances between embedding sets.
//!
//! Everything here accumulates in `f64`. Slice-based entry points accept any
//! `Copy + Into<f64>` element type so callers holding `f64` data avoid the
//! extra rounding of a detour through `f32` tensors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::media::Embeddings;
use crate::tensor::{Layout, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Frames per clip when pooling video embeddings.
pub const VIDEO_WINDOW: usize = 8;

const EIGEN_MAX_ITERS: usize = 10_000;

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - centre;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

fn check_same(x: &[usize], y: &[usize]) -> Result<()> {
    if x != y {
        return Err(shape_err!("{x:?} vs {y:?}"));
    }
    Ok(())
}

fn image_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.layout() {
        Layout::Chw => x.chw_dims(),
        _ => Err(shape_err!("expected a [C, H, W] image, got {:?}", x.shape())),
    }
}

/// Mean SSIM over `planes` channels of `h × w` each, stored planar.
pub fn ssim_planes<T: Copy + Into<f64>>(x: &[T], y: &[T], planes: usize, h: usize, w: usize) -> Result<f64> {
    if x.len() != y.len() || x.len() != planes * h * w || planes == 0 {
        return Err(shape_err!(
            "ssim inputs of {} and {} values for {planes}x{h}x{w}",
            x.len(),
            y.len()
        ));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let g = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let plane = h * w;

    // Horizontal pass into [5][h][ow], vertical pass per output position.
    let mut horiz = vec![0f64; 5 * h * ow];
    let mut total = 0.0;
    for p in 0..planes {
        let xs = &x[p * plane..(p + 1) * plane];
        let ys = &y[p * plane..(p + 1) * plane];
        for r in 0..h {
            for c in 0..ow {
                let mut acc = [0f64; 5];
                for (k, &gk) in g.iter().enumerate() {
                    let a: f64 = xs[r * w + c + k].into();
                    let b: f64 = ys[r * w + c + k].into();
                    acc[0] += gk * a;
                    acc[1] += gk * b;
                    acc[2] += gk * a * a;
                    acc[3] += gk * b * b;
                    acc[4] += gk * a * b;
                }
                for (m, v) in acc.into_iter().enumerate() {
                    horiz[(m * h + r) * ow + c] = v;
                }
            }
        }
        let mut plane_sum = 0.0;
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = [0f64; 5];
                for (k, &gk) in g.iter().enumerate() {
                    for (m, a) in acc.iter_mut().enumerate() {
                        *a += gk * horiz[(m * h + r + k) * ow + c];
                    }
                }
                plane_sum += ssim_window_value(acc, c1, c2);
            }
        }
        total += plane_sum / (oh * ow) as f64;
    }
    Ok(total / planes as f64)
}

/// SSIM of one window from its weighted moments
/// `[E x, E y, E x², E y², E xy]`.
pub(crate) fn ssim_window_value(m: [f64; 5], c1: f64, c2: f64) -> f64 {
    let [mx, my, exx, eyy, exy] = m;
    let vx = exx - mx * mx;
    let vy = eyy - my * my;
    let cov = exy - mx * my;
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM over channels of two `[C, H, W]` images with values in `[0, 1]`.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    check_same(x.shape(), y.shape())?;
    let (c, h, w) = image_dims(x)?;
    ssim_planes(x.data(), y.data(), c, h, w)
}

pub fn mse<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(shape_err!("{} vs {} values", x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sum: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a.into() - b.into();
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// PSNR in dB; `f64::INFINITY` when the inputs are identical.
pub fn psnr_slices<T: Copy + Into<f64>>(x: &[T], y: &[T], peak: f64) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub fn psnr(x: &Tensor, y: &Tensor, peak: f64) -> Result<f64> {
    check_same(x.shape(), y.shape())?;
    psnr_slices(x.data(), y.data(), peak)
}

/// Mean and covariance of a set of embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mu: Vec<f64>,
    /// `dim × dim`, row-major.
    pub sigma: Vec<f64>,
}

impl GaussianStats {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::EmptyInput);
        }
        if sigma.len() != d * d {
            return Err(Error::DimensionMismatch(d * d, sigma.len()));
        }
        for i in 0..d {
            for j in 0..i {
                if (sigma[i * d + j] - sigma[j * d + i]).abs() > 1e-9 {
                    return Err(Error::Validation(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(GaussianStats { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn sigma_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.sigma)
    }
}

/// Column means and unbiased (N − 1) sample covariance.
pub fn gaussian_stats(emb: &Embeddings) -> Result<GaussianStats> {
    let (n, d) = (emb.rows(), emb.dim());
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    let mut mu = vec![0f64; d];
    for i in 0..n {
        for (m, &v) in mu.iter_mut().zip(emb.row(i)) {
            *m += v as f64;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut sigma = vec![0f64; d * d];
    let mut centred = vec![0f64; d];
    for i in 0..n {
        for ((c, &v), &m) in centred.iter_mut().zip(emb.row(i)).zip(&mu) {
            *c = v as f64 - m;
        }
        for a in 0..d {
            for b in a..d {
                sigma[a * d + b] += centred[a] * centred[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = sigma[a * d + b] / denom;
            sigma[a * d + b] = v;
            sigma[b * d + a] = v;
        }
    }
    Ok(GaussianStats { mu, sigma })
}

/// Eigendecomposition of a symmetric matrix: `(eigenvalues, eigenvectors)`,
/// eigenvectors stored as the columns of a row-major `d × d` matrix.
pub fn symmetric_eigen(matrix: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if matrix.len() != d * d {
        return Err(Error::DimensionMismatch(d * d, matrix.len()));
    }
    let eig = eigen(DMatrix::from_row_slice(d, d, matrix))?;
    let mut vectors = vec![0f64; d * d];
    for r in 0..d {
        for c in 0..d {
            vectors[r * d + c] = eig.eigenvectors[(r, c)];
        }
    }
    Ok((eig.eigenvalues.iter().copied().collect(), vectors))
}

fn eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITERS).ok_or(Error::EigenFailure)
}

/// Principal square root of a symmetric PSD matrix, negative eigenvalues
/// clamped to zero.
fn sqrt_psd(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = eigen(m)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// `‖µa − µb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, clamped to be non-negative.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let mean_term: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = a.sigma_matrix();
    let sb = b.sigma_matrix();
    let root_a = sqrt_psd(sa.clone())?;
    let inner = &root_a * &sb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = eigen(inner)?.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Fréchet distance between the Gaussian fits of two embedding sets.
pub fn frechet_from_embeddings(real: &Embeddings, generated: &Embeddings) -> Result<f64> {
    if real.dim() != generated.dim() {
        return Err(Error::DimensionMismatch(real.dim(), generated.dim()));
    }
    frechet_distance(&gaussian_stats(real)?, &gaussian_stats(generated)?)
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Consecutive `len`-frame clips of a `[T, C, H, W]` video, advancing by
/// `stride` frames. Each clip is itself `[len, C, H, W]`.
pub fn frame_windows(video: &Tensor, len: usize, stride: usize) -> Result<Vec<Tensor>> {
    let (t, c, h, w) = video.tchw_dims()?;
    if len == 0 || stride == 0 {
        return Err(Error::Validation("window length and stride must be positive".into()));
    }
    if t < len {
        return Err(Error::TooFewFrames(t));
    }
    let frame = c * h * w;
    (0..=t - len)
        .step_by(stride)
        .map(|s| Tensor::tchw(len, c, h, w, video.data()[s * frame..(s + len) * frame].to_vec()))
        .collect()
}

/// One row of a quality/speed table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub frechet: Option<f64>,
    pub delta_t_mean: f64,
    pub delta_t_std: f64,
    pub model_size_mb: f64,
}

/// Per-pair SSIM and PSNR, aggregated into a report.
pub fn compare_images(pairs: &[(Tensor, Tensor)]) -> Result<MetricReport> {
    let mut s = Vec::with_capacity(pairs.len());
    let mut p = Vec::with_capacity(pairs.len());
    for (reference, candidate) in pairs {
        s.push(ssim(reference, candidate)?);
        p.push(psnr(reference, candidate, 1.0)?);
    }
    let (ssim_mean, ssim_std) = aggregate(&s)?;
    let finite: Vec<f64> = p.iter().copied().filter(|v| v.is_finite()).collect();
    let (psnr_mean, psnr_std) = if finite.is_empty() {
        (f64::INFINITY, 0.0)
    } else {
        aggregate(&finite)?
    };
    Ok(MetricReport {
        ssim_mean,
        ssim_std,
        psnr_mean,
        psnr_std,
        ..MetricReport::default()
    })
}
