use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use difficulty_core::irt::{fit_2pl, IrtFitConfig};
use difficulty_core::lca::{fit_lca, LcaConfig};
use difficulty_core::regression::{cross_validate, CvConfig};
use difficulty_core::synthetic::{generate_irt_world, generate_lca_world, SyntheticWorldConfig};

fn irt(c: &mut Criterion) {
    let world = generate_irt_world(&SyntheticWorldConfig {
        n_students: 1000,
        n_items: 50,
        seed: 1,
        missingness: 0.0,
        ..SyntheticWorldConfig::default()
    })
    .unwrap();
    let cfg = IrtFitConfig::default();
    let mut g = c.benchmark_group("irt");
    g.sample_size(10);
    g.bench_function("fit_2pl_1000x50", |b| {
        b.iter(|| fit_2pl(black_box(&world.records), &cfg).unwrap())
    });
    g.finish();
}

fn lca(c: &mut Criterion) {
    let world = generate_lca_world(&SyntheticWorldConfig {
        n_students: 600,
        n_items: 40,
        seed: 2,
        missingness: 0.1,
        ..SyntheticWorldConfig::default()
    })
    .unwrap();
    let cfg = LcaConfig {
        restarts: 5,
        ..LcaConfig::default()
    };
    let mut g = c.benchmark_group("lca");
    g.sample_size(10);
    g.bench_function("fit_k3_600x40", |b| {
        b.iter(|| fit_lca(black_box(&world.matrix), 3, &cfg).unwrap())
    });
    g.finish();
}

fn ridge(c: &mut Criterion) {
    // 150 rows of 11 features with a linear signal plus a deterministic wobble.
    let x: Vec<Vec<f64>> = (0..150)
        .map(|i| (0..11).map(|j| ((i * 31 + j * 17) % 97) as f64 / 97.0).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().sum::<f64>() + (i as f64 * 0.7).sin() * 0.1)
        .collect();
    let numeric = vec![true; 11];
    let cfg = CvConfig::default();
    c.bench_function("ridge/nested_cv_150x11", |b| {
        b.iter_batched(
            || (x.clone(), y.clone()),
            |(x, y)| cross_validate(&x, &y, &numeric, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, irt, lca, ridge);
criterion_main!(benches);
