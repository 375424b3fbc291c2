use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ofo_bench::{grid, reference};
use ofo_core::analysis::{self, ConstantConvention};
use ofo_core::plant;
use ofo_core::powergrid::{self, DEFAULT_SWEEP};
use ofo_core::sim;
use ofo_core::{equilibria, ControllerConfig, DVector};

fn sensitivity(c: &mut Criterion) {
    let mut group = c.benchmark_group("sensitivity");
    for g in [1.0, 100.0] {
        let model = grid(g);
        group.bench_with_input(BenchmarkId::new("grid", g), &model.plant, |b, p| {
            b.iter(|| plant::compute_sensitivity(black_box(p)).unwrap())
        });
    }
    group.finish();
}

fn equilibria_and_certificates(c: &mut Criterion) {
    let model = grid(1.0);
    let obj = model.objective().unwrap();
    c.bench_function("fixed_point/grid", |b| {
        b.iter(|| equilibria::decentralized_fixed_point(&obj, &model.model, &model.disturbance).unwrap())
    });
    c.bench_function("eta_star/grid", |b| {
        b.iter(|| analysis::eta_star(&model.plant, &obj, &model.model, ConstantConvention::Tight).unwrap())
    });
}

fn closed_loop(c: &mut Criterion) {
    let (obj, model, d) = reference();
    let cfg = ControllerConfig::decentralized(0.1).unwrap();
    c.bench_function("algebraic/reference", |b| {
        b.iter(|| sim::run_algebraic(&model, &obj, &d, &cfg, &DVector::zeros(2), 10_000).unwrap())
    });

    let g = grid(1.0);
    let obj = g.objective().unwrap();
    let cfg = ControllerConfig::decentralized(0.05).unwrap();
    let x0 = DVector::zeros(g.plant.n_state());
    let u0 = DVector::zeros(g.plant.n_io());
    c.bench_function("lti/grid", |b| {
        b.iter(|| sim::run_lti_with_model(&g.plant, &g.model, &obj, &cfg, &x0, &u0, 20_000).unwrap())
    });
}

fn sweep(c: &mut Criterion) {
    let base = powergrid::default_topology();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for parallel in [false, true] {
        group.bench_with_input(BenchmarkId::new("default", parallel), &parallel, |b, &p| {
            b.iter(|| powergrid::sweep_g(&base, &DEFAULT_SWEEP, 0.05, 100_000, p))
        });
    }
    group.finish();
}

criterion_group!(benches, sensitivity, equilibria_and_certificates, closed_loop, sweep);
criterion_main!(benches);
