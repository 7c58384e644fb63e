mod common;

use common::*;
use lwdec_core::media::Embeddings;
use lwdec_core::metrics::*;
use lwdec_core::{Error, Layout, Tensor};
use proptest::prelude::*;
use rand::distr::{Distribution, Uniform};

/// Direct per-window SSIM with the full 2-D window.
fn ssim_oracle(x: &[f64], y: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let g = gaussian_window(11, 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..c {
        let mut sum = 0.0;
        for r in 0..=h - 11 {
            for col in 0..=w - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = g[i] * g[j];
                        let a = x[(ch * h + r + i) * w + col + j];
                        let b = y[(ch * h + r + i) * w + col + j];
                        mx += k * a;
                        my += k * b;
                        xx += k * a * a;
                        yy += k * b * b;
                        xy += k * a * b;
                    }
                }
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += sum / ((h - 10) * (w - 10)) as f64;
    }
    total / c as f64
}

fn random_f64(n: usize, seed: u64) -> Vec<f64> {
    Uniform::new_inclusive(0.0, 1.0).unwrap().sample_iter(rng(seed)).take(n).collect()
}

fn random_stats(d: usize, seed: u64) -> GaussianStats {
    // A·Aᵀ + I is symmetric and well conditioned.
    let a = random_f64(d * d, seed);
    let mut sigma = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sigma[i * d + j] = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
        }
    }
    GaussianStats::new(random_f64(d, seed ^ 9), sigma).unwrap()
}

#[test]
fn ssim_of_identical_images_is_one() {
    for seed in 0..5 {
        let x = random_image(16, 20, seed);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn ssim_drops_for_inverted_images() {
    let mut data = vec![0f32; 3 * 16 * 16];
    for (i, v) in data.iter_mut().enumerate() {
        *v = if (i / 2 + i / 32) % 2 == 0 { 1.0 } else { 0.0 };
    }
    let x = Tensor::chw(3, 16, 16, data).unwrap();
    let inv = Tensor::chw(3, 16, 16, x.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    assert!(ssim(&x, &inv).unwrap() < ssim(&x, &x).unwrap());
}

#[test]
fn ssim_matches_window_oracle() {
    for seed in 0..4 {
        let (h, w) = (13 + seed as usize, 17);
        let x = random_f64(3 * h * w, seed);
        let y = random_f64(3 * h * w, seed + 100);
        let got = ssim_planes(&x, &y, 3, h, w).unwrap();
        assert!((got - ssim_oracle(&x, &y, 3, h, w)).abs() <= 1e-7);
    }
}

#[test]
fn ssim_errors() {
    let a = random_image(12, 12, 1);
    let b = random_image(12, 13, 1);
    assert!(matches!(ssim(&a, &b), Err(Error::ShapeMismatch(_))));
    let small = random_image(10, 30, 1);
    assert!(matches!(ssim(&small, &small), Err(Error::TooSmall(_))));
}

#[test]
fn psnr_examples() {
    let x = random_image(8, 8, 1);
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);

    let xs = random_f64(300, 2).into_iter().map(|v| v * 0.9).collect::<Vec<_>>();
    let ys: Vec<f64> = xs.iter().map(|v| v + 0.1).collect();
    assert!((psnr_slices(&xs, &ys, 1.0).unwrap() - 20.0).abs() <= 1e-9);

    // Through f32 tensors the offset itself is rounded to single precision.
    let yt = Tensor::chw(3, 8, 8, x.data().iter().map(|v| v * 0.9 + 0.1).collect()).unwrap();
    let xt = Tensor::chw(3, 8, 8, x.data().iter().map(|v| v * 0.9).collect()).unwrap();
    assert!((psnr(&xt, &yt, 1.0).unwrap() - 20.0).abs() <= 1e-4);

    let other = random_image(8, 9, 1);
    assert!(matches!(psnr(&x, &other, 1.0), Err(Error::ShapeMismatch(_))));
}

#[test]
fn psnr_matches_direct_formula() {
    let x = random_f64(500, 3);
    let y = random_f64(500, 4);
    let mse: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 500.0;
    let oracle = 10.0 * (1.0 / mse).log10();
    assert!((psnr_slices(&x, &y, 1.0).unwrap() - oracle).abs() <= 1e-9);
    let oracle255 = 10.0 * (255.0f64 * 255.0 / mse).log10();
    assert!((psnr_slices(&x, &y, 255.0).unwrap() - oracle255).abs() <= 1e-9);
}

#[test]
fn psnr_decreases_with_noise_amplitude() {
    let x = random_f64(3 * 32 * 32, 5);
    let noise: Vec<f64> = random_f64(x.len(), 6).into_iter().map(|v| 2.0 * v - 1.0).collect();
    let values: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2]
        .iter()
        .map(|a| {
            let y: Vec<f64> = x.iter().zip(&noise).map(|(v, n)| v + a * n).collect();
            psnr_slices(&x, &y, 1.0).unwrap()
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

#[test]
fn gaussian_stats_examples() {
    let e = Embeddings::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
    let s = gaussian_stats(&e).unwrap();
    assert_eq!(s.mu, vec![1.0, 1.0]);
    assert_eq!(s.sigma, vec![2.0, 2.0, 2.0, 2.0]);

    let same = Embeddings::from_rows(&vec![vec![1.5, -2.0, 3.0]; 4]).unwrap();
    assert!(gaussian_stats(&same).unwrap().sigma.iter().all(|&v| v == 0.0));

    let one = Embeddings::new(1, 2, vec![1.0, 2.0]).unwrap();
    assert!(matches!(gaussian_stats(&one), Err(Error::TooFewRows(1))));
}

#[test]
fn gaussian_stats_matches_two_pass_oracle() {
    let (n, d) = (100, 8);
    let e = Embeddings::new(n, d, uniform_vec(n * d, -3.0, 3.0, 7)).unwrap();
    let s = gaussian_stats(&e).unwrap();
    let e = &e;
    let col = |j: usize| (0..n).map(move |i| e.row(i)[j] as f64);
    let mu: Vec<f64> = (0..d).map(|j| col(j).sum::<f64>() / n as f64).collect();
    for a in 0..d {
        assert!((s.mu[a] - mu[a]).abs() <= 1e-10);
        for b in 0..d {
            let cov = col(a).zip(col(b)).map(|(x, y)| (x - mu[a]) * (y - mu[b])).sum::<f64>() / (n - 1) as f64;
            assert!((s.sigma[a * d + b] - cov).abs() <= 1e-10);
        }
    }
}

#[test]
fn frechet_examples() {
    let s = random_stats(6, 1);
    assert!(frechet_distance(&s, &s).unwrap().abs() <= 1e-6);

    let eye = |d: usize| (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    let a = GaussianStats::new(vec![0.0; 3], eye(3)).unwrap();
    let m = vec![1.0, -2.0, 0.5];
    let b = GaussianStats::new(m.clone(), eye(3)).unwrap();
    let norm2: f64 = m.iter().map(|v| v * v).sum();
    assert!((frechet_distance(&a, &b).unwrap() - norm2).abs() <= 1e-6);

    let a = GaussianStats::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 4.0]).unwrap();
    let b = GaussianStats::new(vec![0.0, 0.0], vec![9.0, 0.0, 0.0, 16.0]).unwrap();
    assert!((frechet_distance(&a, &b).unwrap() - 8.0).abs() <= 1e-6);
}

#[test]
fn frechet_errors_and_rank_deficiency() {
    let a = random_stats(3, 1);
    let b = random_stats(4, 1);
    assert!(matches!(frechet_distance(&a, &b), Err(Error::DimensionMismatch(3, 4))));
    // Rank-one covariances still give a finite, non-negative distance.
    let r = GaussianStats::new(vec![0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let d = frechet_distance(&r, &r).unwrap();
    assert!((0.0..=1e-6).contains(&d));
    let nan = GaussianStats { mu: vec![0.0], sigma: vec![f64::NAN] };
    assert!(matches!(frechet_distance(&nan, &nan), Err(Error::EigenFailure)));
    assert!(GaussianStats::new(vec![0.0, 0.0], vec![1.0, 0.5, 0.4, 1.0]).is_err());
}

#[test]
fn frechet_from_embedding_sets() {
    let a = Embeddings::new(50, 4, uniform_vec(200, -1.0, 1.0, 1)).unwrap();
    let shifted = Embeddings::new(50, 4, a.data().iter().map(|v| v + 2.0).collect()).unwrap();
    // A pure shift moves only the mean: distance = 4 dims × 2².
    assert!((frechet_from_embeddings(&a, &shifted).unwrap() - 16.0).abs() <= 1e-4);
}

#[test]
fn aggregate_examples() {
    assert_eq!(aggregate(&[1.0, 1.0, 1.0]).unwrap(), (1.0, 0.0));
    assert_eq!(aggregate(&[0.0, 2.0]).unwrap(), (1.0, 1.0));
    assert_eq!(aggregate(&[3.5]).unwrap(), (3.5, 0.0));
    assert!(matches!(aggregate(&[]), Err(Error::EmptyInput)));
    let v = random_f64(1000, 3);
    let mean = v.iter().sum::<f64>() / 1000.0;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1000.0;
    let (m, s) = aggregate(&v).unwrap();
    assert!((m - mean).abs() <= 1e-12 && (s - var.sqrt()).abs() <= 1e-12);
}

#[test]
fn video_windows_feed_frechet() {
    let video = random_tensor(&[10, 3, 2, 2], Layout::Tchw, 4);
    let windows = frame_windows(&video, VIDEO_WINDOW, 1).unwrap();
    assert_eq!(windows.len(), 3);
    assert_eq!(windows[1].shape(), &[8, 3, 2, 2]);
    assert_eq!(windows[1].frame(0).unwrap().data(), video.frame(1).unwrap().data());
    let short = random_tensor(&[7, 3, 2, 2], Layout::Tchw, 4);
    assert!(matches!(frame_windows(&short, VIDEO_WINDOW, 1), Err(Error::TooFewFrames(7))));
}

proptest! {
    #![proptest_config(cases(32))]

    #[test]
    fn ssim_is_symmetric(h in 11usize..=16, w in 11usize..=16, seed in any::<u64>()) {
        let x = random_f64(3 * h * w, seed);
        let y = random_f64(3 * h * w, seed ^ 1);
        let a = ssim_planes(&x, &y, 3, h, w).unwrap();
        let b = ssim_planes(&y, &x, 3, h, w).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn frechet_is_symmetric_and_non_negative(d in 1usize..=12, seed in any::<u64>()) {
        let a = random_stats(d, seed);
        let b = random_stats(d, seed ^ 3);
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-6);
        prop_assert!(frechet_distance(&a, &a).unwrap() <= 1e-6);
    }

    #[test]
    fn eigendecomposition_reconstructs(d in 1usize..=64, seed in any::<u64>()) {
        let s = random_stats(d, seed);
        let (vals, vecs) = symmetric_eigen(&s.sigma, d).unwrap();
        for i in 0..d {
            for j in 0..d {
                let r: f64 = (0..d).map(|k| vecs[i * d + k] * vals[k] * vecs[j * d + k]).sum();
                prop_assert!((r - s.sigma[i * d + j]).abs() <= 1e-8);
            }
        }
    }
}
