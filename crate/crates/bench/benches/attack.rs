use criterion::{criterion_group, criterion_main, Criterion};
use patchrev_bench::scene;
use patchrev_core::attack::{
    bhe_optimize, draw_samples, eot_gradient, initial_patch, BheConfig, EotConfig, ToyClassifier,
};
use patchrev_core::synth::synthetic_image;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bhe(c: &mut Criterion) {
    let s = scene(3, 32, 4);
    let clf = ToyClassifier::toy(0);
    let cfg = BheConfig::for_image(32, 32, 7);
    c.bench_function("bhe_32px_default", |b| {
        b.iter(|| bhe_optimize(clf.clone(), black_box(&s.original), &s.patch, &cfg).unwrap())
    });
}

fn eot_step(c: &mut Criterion) {
    let clf = ToyClassifier::toy(0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<_> = (0..8).map(|_| synthetic_image(&mut rng, 32, 32)).collect();
    let cfg = EotConfig::for_images(2, 32, 32, 5);
    let patch = initial_patch(8, 5);
    let samples = draw_samples(&data, &cfg, patch.side(), cfg.batch, &mut rng);
    c.bench_function("eot_gradient_batch8", |b| {
        b.iter(|| eot_gradient(&clf, &data, &cfg, black_box(&patch), &samples).unwrap())
    });
}

criterion_group!(benches, bhe, eot_step);
criterion_main!(benches);
