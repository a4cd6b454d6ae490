use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use linext_bench::uniform_cloud;
use linext_core::dsr::dsr;
use linext_core::pipeline::chamfer;
use linext_core::spatial::{fps, knn_bruteforce, knn_grid, serialize, CurveChoice, DEFAULT_BITS};
use std::hint::black_box;

fn knn(c: &mut Criterion) {
    let mut g = c.benchmark_group("knn_k16");
    for n in [1_000, 10_000] {
        let keys = uniform_cloud(n, 20.0, 1);
        let queries = uniform_cloud(n, 20.0, 2);
        g.bench_with_input(BenchmarkId::new("grid", n), &n, |b, _| b.iter(|| knn_grid(&queries, &keys, 16).unwrap()));
        if n <= 1_000 {
            g.bench_with_input(BenchmarkId::new("bruteforce", n), &n, |b, _| {
                b.iter(|| knn_bruteforce(&queries, &keys, 16).unwrap())
            });
        }
    }
    g.finish();
}

fn chamfer_distance(c: &mut Criterion) {
    let p = uniform_cloud(20_000, 20.0, 3);
    let q = uniform_cloud(20_000, 20.0, 4);
    c.bench_function("chamfer_20k", |b| b.iter(|| chamfer(black_box(&p), black_box(&q)).unwrap()));
}

fn sampling(c: &mut Criterion) {
    let p = uniform_cloud(8_192, 20.0, 5);
    c.bench_function("fps_8192_to_2048", |b| b.iter(|| fps(&p, 2048, 0).unwrap()));
    let bounds = p.bounds().unwrap().padded(1e-3);
    c.bench_function("serialize_hilbert_8192", |b| {
        b.iter(|| serialize(&p, CurveChoice::Hilbert, DEFAULT_BITS, &bounds, 0).unwrap())
    });
    c.bench_function("dsr_8192", |b| b.iter(|| dsr(&p, [5, 8, 12, 15], 1.0, 0).unwrap()));
}

criterion_group!(benches, knn, chamfer_distance, sampling);
criterion_main!(benches);
