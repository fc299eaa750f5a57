use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use revfilt_bench::{filter, test_image, FILTERS};

fn builtin_filters(c: &mut Criterion) {
    let mut group = c.benchmark_group("filter_apply");
    group.sample_size(10);
    for size in [64usize, 256] {
        let img = test_image(size);
        for name in FILTERS {
            let f = filter(name);
            group.bench_with_input(BenchmarkId::new(name, size), &img, |b, img| {
                b.iter(|| f.apply(img).unwrap())
            });
        }
    }
    group.finish();
}

fn spectral_norm(c: &mut Criterion) {
    let img = test_image(128);
    c.bench_function("spectral_norm_128", |b| {
        b.iter(|| img.spectral_norm(Default::default()))
    });
}

criterion_group!(benches, builtin_filters, spectral_norm);
criterion_main!(benches);
