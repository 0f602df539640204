use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use w2dual_bench::{icnn, normal};

fn icnn_passes(c: &mut Criterion) {
    let mut g = c.benchmark_group("icnn");
    g.sample_size(20);
    for (dim, hidden) in [(2usize, vec![64usize, 64]), (16, vec![64, 64, 32])] {
        let (net, p) = icnn(dim, &hidden, 0);
        let x = normal(dim, 1024, 1);
        g.bench_with_input(BenchmarkId::new("values", dim), &x, |b, x| b.iter(|| net.values(&p, x).unwrap()));
        g.bench_with_input(BenchmarkId::new("grad_input", dim), &x, |b, x| {
            b.iter(|| net.value_and_grad_input(&p, x).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("grad_params", dim), &x, |b, x| {
            b.iter(|| net.grad_params_mean(&p, x).unwrap())
        });
        let v = normal(dim, 1024, 2);
        g.bench_with_input(BenchmarkId::new("hessian_vector", dim), &x, |b, x| {
            b.iter(|| net.directional_grad_adjoints(&p, x, &v).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, icnn_passes);
criterion_main!(benches);
