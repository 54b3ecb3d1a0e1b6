use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};

use hyperdata_core::calculus::laplacian;
use hyperdata_core::catalog::adss_data;
use hyperdata_core::constraints::{check_dec, eval_phi, DecOptions};
use hyperdata_core::mass::mass_functional;
use hyperdata_core::{build_grid, Field, Grid, InitialData};

fn setup() -> (Arc<Grid>, Field, InitialData) {
    let grid = build_grid(3, 1.0, 12.0, 64, 16).unwrap();
    let f = Field::scalar_fn(&grid, 0.0, |r, w| {
        (-2.0 * r).exp() * (1.0 + w[0] * w[1] + w[2])
    });
    let data = adss_data(1.0, &grid).unwrap();
    (grid, f, data)
}

fn kernels(c: &mut Criterion, label: &str, run: &dyn Fn(&(dyn Fn() + Sync))) {
    let (_grid, f, data) = setup();
    let dec = DecOptions {
        strict: false,
        ..Default::default()
    };
    let mut group = c.benchmark_group(label);
    group.sample_size(10);
    group.bench_function("laplacian", |b| {
        b.iter(|| {
            run(&|| {
                black_box(laplacian(&f).unwrap());
            })
        })
    });
    group.bench_function("constraint_map", |b| {
        b.iter(|| {
            run(&|| {
                black_box(eval_phi(&data).unwrap());
            })
        })
    });
    group.bench_function("dec_check", |b| {
        b.iter(|| {
            run(&|| {
                black_box(check_dec(&data, &dec).unwrap());
            })
        })
    });
    group.bench_function("mass", |b| {
        b.iter(|| {
            run(&|| {
                black_box(mass_functional(&data).unwrap());
            })
        })
    });
    group.finish();
}

#[cfg(feature = "parallel")]
fn bench(c: &mut Criterion) {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    kernels(c, "sequential", &|f| single.install(f));
    kernels(c, "parallel", &|f| f());
}

#[cfg(not(feature = "parallel"))]
fn bench(c: &mut Criterion) {
    kernels(c, "sequential", &|f| f());
}

criterion_group!(benches, bench);
criterion_main!(benches);
