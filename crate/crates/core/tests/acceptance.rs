//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so every line is printed and
//! the timing criteria run serially without competing test threads.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use lwdec_core::harness::{bench_model, synthetic_latent, BenchSpec};
use lwdec_core::kernels::{attention, conv2d, conv2d_upsampled, group_norm, upsample_nearest_2x};
use lwdec_core::loss::{combine_loss, combine_loss_terms, LossComponents, LossSchedule};
use lwdec_core::metrics::{frechet_distance, psnr_slices, ssim, GaussianStats};
use lwdec_core::weights::{container_len, size_mb};
use lwdec_core::*;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn seeded(arch: Arch, seed: u64) -> DecoderModel {
    build_decoder(DecoderConfig::new(arch), WeightSource::Seed(seed)).unwrap()
}

const ORACLE_CASES: usize = 200;
const ORACLE_TOL: f64 = 1e-5;

fn kernel_oracles() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let fast = [ExecMode::optimized(), ExecMode::optimized_deterministic()];
    let mut worst = [0f64; 4];

    for case in 0..ORACLE_CASES {
        let seed = r.random::<u64>();
        let (cin, cout) = (r.random_range(1..=8), r.random_range(1..=8));
        let k = [1, 3, 5][r.random_range(0..3)];
        let padding = r.random_range(0..=2);
        let stride = r.random_range(1..=2);
        let (h, w) = (r.random_range(k.max(1)..=16), r.random_range(k.max(1)..=16));
        let x = random_chw(cin, h, w, seed);
        let wt = random_tensor(&[cout, cin, k, k], Layout::Flat, seed ^ 1);
        let bias = uniform_vec(cout, -1.0, 1.0, seed ^ 2);
        let naive = conv2d(&x, &wt, Some(&bias), stride, padding, ExecMode::naive()).unwrap();
        let naive_up = conv2d_upsampled(&x, &wt, Some(&bias), k / 2, ExecMode::naive()).unwrap();
        for mode in fast {
            let got = conv2d(&x, &wt, Some(&bias), stride, padding, mode).unwrap();
            worst[0] = worst[0].max(rel_err(got.data(), naive.data()));
            let got = conv2d_upsampled(&x, &wt, Some(&bias), k / 2, mode).unwrap();
            worst[0] = worst[0].max(rel_err(got.data(), naive_up.data()));
        }

        let groups = r.random_range(1..=4);
        let c = groups * r.random_range(1..=4);
        let offset = r.random_range(-20.0f32..20.0);
        let x = random_chw(c, r.random_range(1..=12), r.random_range(1..=12), seed ^ 3);
        let x = Tensor::new(x.shape().to_vec(), Layout::Chw, x.data().iter().map(|v| v + offset).collect()).unwrap();
        let gamma = uniform_vec(c, 0.5, 1.5, seed ^ 4);
        let beta = uniform_vec(c, -1.0, 1.0, seed ^ 5);
        let naive = group_norm(&x, groups, &gamma, &beta, 1e-6, ExecMode::naive()).unwrap();
        for mode in fast {
            let got = group_norm(&x, groups, &gamma, &beta, 1e-6, mode).unwrap();
            worst[1] = worst[1].max(rel_err(got.data(), naive.data()));
        }

        let (l, d) = (r.random_range(1..=96), r.random_range(1..=32));
        let q = random_tensor(&[l, d], Layout::Flat, seed ^ 6);
        let kk = random_tensor(&[l, d], Layout::Flat, seed ^ 7);
        let v = random_tensor(&[l, d], Layout::Flat, seed ^ 8);
        let naive = attention(&q, &kk, &v, None, ExecMode::naive()).unwrap();
        for mode in fast {
            let got = attention(&q, &kk, &v, None, mode).unwrap();
            worst[2] = worst[2].max(rel_err(got.data(), naive.data()));
        }

        let x = random_chw(r.random_range(1..=6), r.random_range(1..=16), r.random_range(1..=16), seed ^ 9);
        let naive = upsample_nearest_2x(&x, ExecMode::naive()).unwrap();
        for mode in fast {
            let got = upsample_nearest_2x(&x, mode).unwrap();
            worst[3] = worst[3].max(rel_err(got.data(), naive.data()));
        }
        let _ = case;
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{ORACLE_CASES} cases each; max rel err conv2d {:.1e}, group_norm {:.1e}, attention {:.1e}, upsample {:.1e}; {secs:.1}s",
        worst[0], worst[1], worst[2], worst[3]
    );
    check(worst.iter().all(|&e| e <= ORACLE_TOL) && secs < 120.0, detail)
}

fn topology_contracts() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for arch in [Arch::RefVae, Arch::Tae192] {
        let model = seeded(arch, 1);
        let mut times = Vec::new();
        for (lh, out) in [(32usize, 256usize), (128, 1024)] {
            let latent = synthetic_latent(&[4, lh, lh], 2);
            let start = Instant::now();
            let img = model.decode_image(&latent, ExecMode::optimized()).unwrap();
            times.push(start.elapsed().as_secs_f64());
            let shape_ok = img.shape() == [3, out, out];
            let range_ok = img.data().iter().all(|v| (0.0..=1.0).contains(v));
            ok &= shape_ok && range_ok;
            notes.push(format!("{arch} 4x{lh}x{lh} -> {:?}{}", img.shape(), if range_ok { "" } else { " OUT OF RANGE" }));
        }
        // Workload grows with pixel count: 1024² must take longer than 256².
        ok &= times[1] > times[0];
        notes.push(format!("{arch} {:.2}s/{:.2}s", times[0], times[1]));
    }
    check(ok, notes.join("; "))
}

fn size_claims() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let tae = seeded(Arch::Tae192, 1);
    let vae = seeded(Arch::RefVae, 1);
    let tae_path = dir.path().join("tae192-f16.lwdc");
    let vae_path = dir.path().join("refvae-f32.lwdc");
    let tae_bytes = write_container(&tae, DType::F16, &tae_path).unwrap();
    let vae_bytes = write_container(&vae, DType::F32, &vae_path).unwrap();
    let on_disk = |p: &std::path::Path| std::fs::metadata(p).unwrap().len();
    let consistent = tae_bytes == on_disk(&tae_path)
        && vae_bytes == on_disk(&vae_path)
        && container_len(&tae, DType::F16).unwrap() == tae_bytes
        && container_len(&vae, DType::F32).unwrap() == vae_bytes;
    let (tae_mb, vae_mb) = (size_mb(tae_bytes), size_mb(vae_bytes));
    let ratio = vae.param_count() as f64 / tae.param_count() as f64;
    check(
        consistent && (15.0..=35.0).contains(&tae_mb) && vae_mb >= 180.0 && ratio >= 4.0,
        format!(
            "tae192 f16 {tae_mb:.2} MB, refvae f32 {vae_mb:.2} MB, params {} / {} = {ratio:.2}x",
            vae.param_count(),
            tae.param_count()
        ),
    )
}

fn bench_spec(arch: Arch, res: usize, frames: usize) -> BenchSpec {
    BenchSpec {
        warmup_iters: 1,
        timed_iters: 3,
        ..BenchSpec::new(arch, (res, res), frames)
    }
}

fn timed(model: &DecoderModel, spec: &BenchSpec, latent: &Tensor) -> f64 {
    bench_model(model, std::slice::from_ref(latent), spec, 0.0).unwrap().delta_t_mean
}

const RUNS: usize = 3;

fn image_speed() -> Outcome {
    let tae = seeded(Arch::Tae192, 1);
    let vae = seeded(Arch::RefVae, 1);
    let latent = synthetic_latent(&[4, 32, 32], 3);
    let mut ratios = Vec::new();
    for _ in 0..RUNS {
        let t = timed(&tae, &bench_spec(Arch::Tae192, 256, 1), &latent);
        let v = timed(&vae, &bench_spec(Arch::RefVae, 256, 1), &latent);
        ratios.push((v / t, t, v));
    }
    let detail = ratios
        .iter()
        .map(|(r, t, v)| format!("refvae/tae192 {r:.2}x ({v:.3}s vs {t:.3}s)"))
        .collect::<Vec<_>>()
        .join("; ");
    check(ratios.iter().all(|(r, _, _)| *r >= 1.5), detail)
}

fn video_speed() -> Outcome {
    let tae = seeded(Arch::Tae192, 1);
    let temporal = seeded(Arch::Tae192Temporal, 1);
    let vae = seeded(Arch::RefVae, 1);
    let latents = synthetic_latent(&[8, 4, 8, 8], 4);
    let mut ok = true;
    let mut notes = Vec::new();
    for _ in 0..RUNS {
        let t = timed(&tae, &bench_spec(Arch::Tae192, 64, 8), &latents);
        let tt = timed(&temporal, &bench_spec(Arch::Tae192Temporal, 64, 8), &latents);
        let v = timed(&vae, &bench_spec(Arch::RefVae, 64, 8), &latents);
        ok &= tt / t >= 2.0 && v / tt >= 1.5;
        notes.push(format!(
            "per 8 frames tae192 {t:.3}s, tae192t {tt:.3}s, refvae {v:.3}s: tae192t/tae192 {:.2}x (need 2), refvae/tae192t {:.2}x (need 1.5)",
            tt / t,
            v / tt
        ));
    }
    check(ok, notes.join("; "))
}

fn metric_identities() -> Outcome {
    let x = random_image(64, 64, 5);
    let s = ssim(&x, &x).unwrap();

    let base: Vec<f64> = uniform_vec(3 * 64 * 64, 0.0, 0.9, 6).into_iter().map(f64::from).collect();
    let shifted: Vec<f64> = base.iter().map(|v| v + 0.1).collect();
    let p = psnr_slices(&base, &shifted, 1.0).unwrap();

    let d = 16;
    let a = uniform_vec(d * d, -1.0, 1.0, 7);
    let mut sigma = vec![0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            sigma[i * d + j] = (0..d).map(|k| a[i * d + k] as f64 * a[j * d + k] as f64).sum::<f64>()
                + if i == j { 0.5 } else { 0.0 };
        }
    }
    let mu: Vec<f64> = uniform_vec(d, -1.0, 1.0, 8).into_iter().map(f64::from).collect();
    let stats = GaussianStats::new(mu.clone(), sigma).unwrap();
    let self_dist = frechet_distance(&stats, &stats).unwrap();

    let eye: Vec<f64> = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let zero = GaussianStats::new(vec![0.0; d], eye.clone()).unwrap();
    let moved = GaussianStats::new(mu.clone(), eye).unwrap();
    let norm2: f64 = mu.iter().map(|v| v * v).sum();
    let id_dist = frechet_distance(&zero, &moved).unwrap();

    let da = GaussianStats::new(vec![0.0; 2], vec![1.0, 0.0, 0.0, 4.0]).unwrap();
    let db = GaussianStats::new(vec![0.0; 2], vec![9.0, 0.0, 0.0, 16.0]).unwrap();
    let diag = frechet_distance(&da, &db).unwrap();

    let ok = (s - 1.0).abs() <= 1e-9
        && (p - 20.0).abs() <= 1e-9
        && self_dist.abs() <= 1e-6
        && (id_dist - norm2).abs() <= 1e-6
        && (diag - 8.0).abs() <= 1e-6;
    check(
        ok,
        format!(
            "ssim(x,x)-1 {:.1e}, psnr-20 {:.1e}, frechet(a,a) {self_dist:.1e}, identity-cov err {:.1e}, diagonal-8 {:.1e}",
            s - 1.0,
            p - 20.0,
            id_dist - norm2,
            diag - 8.0
        ),
    )
}

fn loss_gate() -> Outcome {
    let s = LossSchedule::default();
    let c = LossComponents::new(1.0, 1.0, 1.0);
    let open = combine_loss(&c, 20_000, &s);
    let closed = combine_loss(&c, 5_000, &s);
    let at = combine_loss_terms(&c, s.t0, &s);
    let before = combine_loss_terms(&c, s.t0 - 1, &s);
    let step_exact = at.gan == s.gamma * c.gan
        && before.gan == 0.0
        && at.mse == before.mse
        && at.lpips == before.lpips;
    let ok = (open - 2.2).abs() <= 1e-12 && (closed - 1.4).abs() <= 1e-12 && step_exact;
    check(
        ok,
        format!(
            "t=20000 -> {open}, t=5000 -> {closed}, adversarial term at t0 {} / at t0-1 {}",
            at.gan, before.gan
        ),
    )
}

fn determinism() -> Outcome {
    let cases = [
        (seeded(Arch::Tae192, 3), synthetic_latent(&[4, 16, 16], 1)),
        (seeded(Arch::Tae192Temporal, 3), synthetic_latent(&[3, 4, 8, 8], 1)),
        (seeded(Arch::RefVae, 3), synthetic_latent(&[4, 8, 8], 1)),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (model, latent) in &cases {
        let decode = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    let mode = ExecMode::optimized_deterministic();
                    if latent.layout() == Layout::Tchw {
                        model.decode_video(latent, mode).unwrap().checksum()
                    } else {
                        model.decode_image(latent, mode).unwrap().checksum()
                    }
                })
        };
        let sums: Vec<u64> = [1, 1, 2, 4].iter().map(|&t| decode(t)).collect();
        let same = sums.iter().all(|&s| s == sums[0]);
        ok &= same;
        notes.push(format!("{} {:016x}{}", model.arch(), sums[0], if same { "" } else { " DIFFERS" }));
    }
    let mut spec = bench_spec(Arch::Tae192, 64, 1);
    spec.mode = ExecMode::optimized_deterministic();
    let row = bench_model(&cases[0].0, &[synthetic_latent(&[4, 8, 8], 2)], &spec, 0.0).unwrap();
    ok &= row.outputs_identical();
    notes.push(format!("bench checksums identical over {} runs: {}", row.checksums.len(), row.outputs_identical()));
    check(ok, format!("threads 1,1,2,4: {}", notes.join(", ")))
}

fn temporal_identity() -> Outcome {
    let model = seeded(Arch::Tae192Temporal, 4);
    let latent = synthetic_latent(&[1, 4, 32, 32], 5);
    let mut ok = true;
    for mode in [ExecMode::optimized(), ExecMode::optimized_deterministic()] {
        let joint = model.decode_video(&latent, mode).unwrap();
        let framewise = model.decode_video_framewise(&latent, mode).unwrap();
        ok &= joint.data() == framewise.data();
    }
    check(ok, "T=1 decode vs per-frame path on a 4x32x32 latent, bitwise".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("kernel oracle suite", kernel_oracles),
        ("topology contracts", topology_contracts),
        ("size claims", size_claims),
        ("speed ratio (image, 256x256)", image_speed),
        ("speed ratio (video, 8-frame bunch)", video_speed),
        ("metric identities", metric_identities),
        ("loss gate", loss_gate),
        ("determinism", determinism),
        ("temporal identity", temporal_identity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
