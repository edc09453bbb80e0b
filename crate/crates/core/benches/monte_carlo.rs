//! Sequential against rayon-parallel trajectory chunks for one weak
//! estimate. Without the `parallel` feature both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use weakrk::simulate::{builtin_problem, simulate_weak, ExecPolicy, TestFunctional};
use weakrk::tableau::Tableau;

fn bench_policies(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_weak");
    group.sample_size(10);
    for (problem, scheme) in [("gbm", "ri1wm"), ("linear2d", "ri1wm")] {
        let prob = builtin_problem(problem).unwrap().unwrap();
        let tab = Tableau::builtin(scheme).unwrap().unwrap();
        let n = 40_000u64;
        group.throughput(Throughput::Elements(n));
        for (label, policy) in [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel(None))] {
            group.bench_with_input(BenchmarkId::new(label, format!("{scheme}/{problem}")), &policy, |b, &policy| {
                b.iter(|| simulate_weak(&prob, &tab, TestFunctional::Xsq, 1.0, 0.125, black_box(n), 1, policy).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_policies);
criterion_main!(benches);
