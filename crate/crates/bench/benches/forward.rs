use candle_core::{DType, Device, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use yolomed_bench::bench_config;
use yolomed_core::YoloMed;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for (name, dh, csti) in [
        ("baseline", false, false),
        ("dh", true, false),
        ("dh_csti", true, true),
    ] {
        for size in [128usize, 256] {
            let model = YoloMed::new(&bench_config(size, dh, csti), DType::F32).unwrap();
            let x = (Tensor::ones((1, 3, size, size), DType::F32, &Device::Cpu).unwrap() * 0.5)
                .unwrap();
            group.bench_with_input(BenchmarkId::new(name, size), &x, |b, x| {
                b.iter(|| model.forward(x, false).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, forward);
criterion_main!(benches);
