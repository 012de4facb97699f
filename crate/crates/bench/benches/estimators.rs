use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kal_core::ensemble::{
    bbgky_residual, chaos_defect, estimate_correlation, run_ensemble, ResidualSettings,
};
use kal_core::limit_models::{death_chain_evolve, maxwell_moment_ode};
use kal_core::{CollisionKernel, EnsembleSpec, InitialLaw, TestFunction, Unary};

fn ensemble() -> kal_core::Ensemble {
    let times: Vec<f64> = (0..=16).map(|k| k as f64 / 32.0).collect();
    let mut spec = EnsembleSpec::new(
        CollisionKernel::Maxwell,
        0.5,
        100,
        InitialLaw::Maxwellian { t0: 1.0 },
        times,
    );
    spec.realizations = 64;
    run_ensemble(&spec).unwrap()
}

fn estimators(c: &mut Criterion) {
    let ens = ensemble();
    let g = Unary::Gaussian {
        a: 0.5,
        c: [0.0; 3],
    };
    let pair = TestFunction::Tensor(vec![g.clone(), g.clone()]);
    let triple = TestFunction::Tensor(vec![g.clone(), g.clone(), g.clone()]);
    c.bench_function("correlation_l2", |b| {
        b.iter(|| black_box(estimate_correlation(&ens, &pair, 16).unwrap()))
    });
    c.bench_function("correlation_l3", |b| {
        b.iter(|| black_box(estimate_correlation(&ens, &triple, 16).unwrap()))
    });
    c.bench_function("chaos_defect", |b| {
        b.iter(|| black_box(chaos_defect(&ens, &g, &g, 16).unwrap()))
    });
    let settings = ResidualSettings {
        omega_draws: 8,
        pair_samples: 32,
        ..ResidualSettings::default()
    };
    let phi = TestFunction::unary(g.clone());
    let mut group = c.benchmark_group("slow");
    group.sample_size(10);
    group.bench_function("bbgky_residual_l1", |b| {
        b.iter(|| black_box(bbgky_residual(&ens, &phi, 16, &settings).unwrap()))
    });
    group.finish();
}

fn oracles(c: &mut Criterion) {
    let grid: Vec<f64> = (0..=64).map(|k| k as f64 / 32.0).collect();
    c.bench_function("maxwell_moment_ode", |b| {
        b.iter(|| black_box(maxwell_moment_ode(1.0, 3.0, 0.5, &grid).unwrap()))
    });
    c.bench_function("death_chain_n0_200", |b| {
        b.iter(|| black_box(death_chain_evolve(200, 0.5, 200.0, &grid).unwrap()))
    });
}

criterion_group!(benches, estimators, oracles);
criterion_main!(benches);
