//! Compares the data-parallel kernels against single-threaded execution by
//! running the same workload inside rayon pools of different sizes. Build
//! with `--no-default-features` to benchmark the fully sequential fallback
//! code path instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use texterase_tensor::{Graph, Rng, Shape, Tensor};

fn conv_workload() -> (Tensor, Tensor, Tensor, Tensor) {
    let mut rng = Rng::seed_from(11);
    let x = Tensor::randn(Shape::new(1, 64, 64, 320), 1.0, &mut rng);
    let w = Tensor::randn(Shape::new(64, 64, 3, 3), 0.1, &mut rng);
    let mask = Tensor::from_fn(Shape::new(1, 1, 64, 320), |_, _, h, w| {
        if (h / 8 + w / 8) % 3 == 0 {
            0.0
        } else {
            1.0
        }
    });
    let b = Tensor::randn(Shape::new(1, 64, 1, 1), 0.1, &mut rng);
    (x, w, b, mask)
}

fn run_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> f64 {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let bv = g.constant(b.clone());
    let y = g.conv2d(xv, wv, Some(bv), 1, 1);
    g.tensor(y).data()[0]
}

fn run_pconv(x: &Tensor, w: &Tensor, b: &Tensor, m: &Tensor) -> f64 {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let bv = g.constant(b.clone());
    let mv = g.constant(m.clone());
    let (y, _) = g.partial_conv2d(xv, mv, wv, Some(bv), 1, 1);
    g.tensor(y).data()[0]
}

fn bench_threads(c: &mut Criterion) {
    let (x, w, b, m) = conv_workload();
    let max_threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);

    let mut group = c.benchmark_group("conv2d_64c_64x320");
    for threads in [1, max_threads] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |bench, _| {
            bench.iter(|| pool.install(|| black_box(run_conv(&x, &w, &b))));
        });
    }
    group.finish();

    let mut group = c.benchmark_group("partial_conv2d_64c_64x320");
    for threads in [1, max_threads] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |bench, _| {
            bench.iter(|| pool.install(|| black_box(run_pconv(&x, &w, &b, &m))));
        });
    }
    group.finish();
}

criterion_group!(benches, bench_threads);
criterion_main!(benches);
