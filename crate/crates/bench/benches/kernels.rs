use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lwdec_bench::{chw, conv_weight, matrix};
use lwdec_core::kernels::{attention, conv2d, conv2d_upsampled, group_norm, upsample_nearest_2x};
use lwdec_core::ExecMode;

fn modes() -> [(&'static str, ExecMode); 2] {
    [("naive", ExecMode::naive()), ("optimized", ExecMode::optimized())]
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3_64ch_32px");
    let x = chw(64, 32, 32, 1);
    let w = conv_weight(64, 64, 3, 2);
    let b = vec![0.1f32; 64];
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::new("conv2d", name), |bn| {
            bn.iter(|| conv2d(&x, &w, Some(&b), 1, 1, mode).unwrap())
        });
    }
    let low = chw(64, 16, 16, 3);
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::new("upsampled", name), |bn| {
            bn.iter(|| conv2d_upsampled(&low, &w, Some(&b), 1, mode).unwrap())
        });
    }
    g.finish();
}

fn norm_and_upsample(c: &mut Criterion) {
    let x = chw(128, 32, 32, 4);
    let gamma = vec![1.0f32; 128];
    let beta = vec![0.0f32; 128];
    let mut g = c.benchmark_group("elementwise_128ch_32px");
    for (name, mode) in modes() {
        g.bench_function(BenchmarkId::new("group_norm", name), |bn| {
            bn.iter(|| group_norm(&x, 32, &gamma, &beta, 1e-6, mode).unwrap())
        });
        g.bench_function(BenchmarkId::new("upsample", name), |bn| {
            bn.iter(|| upsample_nearest_2x(&x, mode).unwrap())
        });
    }
    g.finish();
}

fn attn(c: &mut Criterion) {
    let mut g = c.benchmark_group("attention_d64");
    for l in [64usize, 256] {
        let (q, k, v) = (matrix(l, 64, 5), matrix(l, 64, 6), matrix(l, 64, 7));
        for (name, mode) in modes() {
            g.bench_with_input(BenchmarkId::new(name, l), &l, |bn, _| {
                bn.iter(|| attention(&q, &k, &v, None, mode).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, norm_and_upsample, attn
}
criterion_main!(benches);
