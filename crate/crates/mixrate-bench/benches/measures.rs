use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use mixrate::measures::{wasserstein_dual_lb, wasserstein_w1};
use mixrate_bench::random_measure;

fn bench_wasserstein(c: &mut Criterion) {
    let a = random_measure(1, 6);
    let b = random_measure(2, 6);
    c.bench_function("wasserstein_w1_6_atoms", |bench| {
        bench.iter(|| wasserstein_w1(black_box(&a), black_box(&b)))
    });

    let kinks: Vec<f64> = {
        let mut k: Vec<f64> = a.locations().chain(b.locations()).collect();
        k.sort_by(f64::total_cmp);
        k
    };
    c.bench_function("wasserstein_dual_lb_6_atoms", |bench| {
        bench.iter(|| wasserstein_dual_lb(black_box(&a), black_box(&b), black_box(&kinks)))
    });
}

criterion_group!(benches, bench_wasserstein);
criterion_main!(benches);
