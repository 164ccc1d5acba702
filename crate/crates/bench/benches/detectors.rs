use adbench_bench::synthetic_points;
use adbench_core::detectors::run_detector;
use adbench_core::{DetectorConfig, DetectorKind};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn detectors(c: &mut Criterion) {
    let mut g = c.benchmark_group("detectors");
    g.sample_size(10);
    for n in [200, 500] {
        let (x, _) = synthetic_points(n, 7);
        for kind in DetectorKind::ALL {
            let cfg = DetectorConfig::new(kind, 11);
            g.bench_with_input(BenchmarkId::new(kind.as_str(), n), &x, |b, x| {
                b.iter(|| run_detector(&cfg, x).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, detectors);
criterion_main!(benches);
