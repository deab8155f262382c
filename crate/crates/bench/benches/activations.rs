use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dqrnn::{ActivationKind, Tape};
use dqrnn_bench::uniform;

fn activations(c: &mut Criterion) {
    const N: usize = 1 << 16;
    let a = uniform(&[N], 1);
    let b = uniform(&[N], 2);
    let mut group = c.benchmark_group("activation_fwd_bwd");
    group.throughput(Throughput::Elements(N as u64));
    for kind in [
        ActivationKind::Tanh,
        ActivationKind::Relu,
        ActivationKind::Elu { alpha: 1.0 },
        ActivationKind::DRelu,
        ActivationKind::Delu { alpha: 1.0 },
    ] {
        group.bench_function(BenchmarkId::from_parameter(kind), |bench| {
            bench.iter(|| {
                let tape = Tape::new();
                let va = tape.var(a.clone(), true);
                let vb = tape.var(b.clone(), true);
                let y = kind.apply(va, kind.is_dual().then_some(vb)).unwrap();
                y.sum().unwrap().backward().unwrap();
                va.grad().unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, activations);
criterion_main!(benches);
