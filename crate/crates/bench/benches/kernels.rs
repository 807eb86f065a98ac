use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use stereokd::costvolume::correlation_forward;
use stereokd::evaluation::profile::profile;
use stereokd::nn::gemm::{matmul, Mat};
use stereokd::nn::graph::Graph;
use stereokd::regression::{probabilities, soft_argmin};
use stereokd::{preset, Tensor};

fn random(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [128usize, 512] {
        let a = random(n * n, 1);
        let b = random(n * n, 2);
        let mut out = vec![0.0; n * n];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, &n| {
            bench.iter(|| matmul(Mat::new(&a, n, n), Mat::new(&b, n, n).t(), black_box(&mut out), 0.0))
        });
    }
    group.finish();
}

fn bench_correlation(c: &mut Criterion) {
    // Quarter-resolution features of a 128x256 pair.
    let dims = [1, 320, 32, 64];
    let n: usize = dims.iter().product();
    let left = random(n, 3);
    let right = random(n, 4);
    c.bench_function("correlation 320ch 32x64 D/4=24 G=40", |b| {
        b.iter(|| correlation_forward(black_box(&left), black_box(&right), dims, 40, 24))
    });
}

fn bench_conv3d(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3d 3x3x3");
    group.sample_size(20);
    for ch in [16usize, 32] {
        let dims = [12, 16, 32];
        let x = Tensor::from_vec(&[1, ch, dims[0], dims[1], dims[2]], random(ch * dims.iter().product::<usize>(), 5))
            .unwrap();
        let w = Tensor::from_vec(&[ch, ch, 3, 3, 3], random(ch * ch * 27, 6)).unwrap();
        let geom = stereokd::nn::conv::ConvGeom::conv3d(ch, ch, dims, 3, 1, 1);
        group.bench_with_input(BenchmarkId::from_parameter(ch), &ch, |b, _| {
            b.iter(|| {
                let mut g = Graph::inference();
                let xv = g.input(x.clone());
                let wv = g.input(w.clone());
                black_box(g.conv(xv, wv, geom));
            })
        });
    }
    group.finish();
}

fn bench_soft_argmin(c: &mut Criterion) {
    let scores = Tensor::from_vec(&[1, 192, 64, 128], random(192 * 64 * 128, 7)).unwrap();
    c.bench_function("softmax + soft-argmin D=192 64x128", |b| {
        b.iter(|| soft_argmin(&probabilities(black_box(&scores)).unwrap()).unwrap())
    });
}

fn bench_profile(c: &mut Criterion) {
    let config = preset("BB21-ED2-N16").unwrap();
    c.bench_function("profile BB21-ED2-N16 544x960", |b| b.iter(|| profile(black_box(&config), 544, 960).unwrap()));
}

criterion_group!(benches, bench_matmul, bench_correlation, bench_conv3d, bench_soft_argmin, bench_profile);
criterion_main!(benches);
