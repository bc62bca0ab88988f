use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use reuse_scope::oracle::{self, stack, LoopOverrides, DEFAULT_UNROLL_CAP};
use reuse_scope::{analyze, calc_reuse_profile};
use reuse_scope_bench::{fig2_config, gemm_config, nested_trace, FIG2_IR, GEMM_IR};

fn static_path(c: &mut Criterion) {
    let mut group = c.benchmark_group("static_path");
    for n in [10i64, 100, 10_000] {
        let config = fig2_config(n, 2 * n, 3 * n);
        group.bench_with_input(BenchmarkId::new("fig2", n), &config, |b, config| {
            b.iter(|| analyze(black_box(FIG2_IR), None, config).unwrap())
        });
    }
    let config = gemm_config();
    group.bench_function("gemm", |b| b.iter(|| analyze(black_box(GEMM_IR), None, &config).unwrap()));
    group.finish();
}

fn reuse_algorithm(c: &mut Criterion) {
    let mut group = c.benchmark_group("calc_reuse_profile");
    for depth in [1usize, 3, 5] {
        let trace = nested_trace(depth, 1000, 8);
        group.bench_with_input(BenchmarkId::from_parameter(depth), &trace, |b, trace| {
            b.iter(|| calc_reuse_profile(trace).unwrap())
        });
    }
    group.finish();
}

fn oracles(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    let small = analyze(FIG2_IR, None, &fig2_config(10, 20, 30)).unwrap();
    group.bench_function("unroll_fig2_10_20_30", |b| {
        b.iter(|| oracle::oracle_profile(&small.trace, &LoopOverrides::default(), DEFAULT_UNROLL_CAP).unwrap())
    });
    let stream = oracle::unroll(&small.trace, &LoopOverrides::default(), DEFAULT_UNROLL_CAP).unwrap();
    group.bench_function("tree_stream", |b| b.iter(|| stack::exact_reuse_profile(&stream.addresses)));
    for chunks in [2usize, 8] {
        group.bench_with_input(BenchmarkId::new("parallel_stream", chunks), &chunks, |b, &chunks| {
            b.iter(|| stack::parallel_reuse_profile(&stream.addresses, chunks))
        });
    }
    group.finish();
}

criterion_group!(benches, static_path, reuse_algorithm, oracles);
criterion_main!(benches);
