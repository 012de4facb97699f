use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kal_core::rng::{stream, Purpose};
use kal_core::{elastic_collide, CollisionKernel, InitialLaw, Mode, SystemState};
use rand::Rng;

fn collide(c: &mut Criterion) {
    let mut rng = stream(1, Purpose::Harness(0), 0);
    let v: Vec<[f64; 3]> = (0..1024)
        .map(|_| std::array::from_fn(|_| rng.random::<f64>() - 0.5))
        .collect();
    let omega = [0.0, 0.6, 0.8];
    c.bench_function("elastic_collide", |b| {
        let mut k = 0;
        b.iter(|| {
            k = (k + 1) & 1023;
            black_box(elastic_collide(v[k], v[(k + 1) & 1023], omega))
        })
    });
}

fn events(c: &mut Criterion) {
    let mut group = c.benchmark_group("first_1000_events");
    for (name, kernel) in [
        ("maxwell", CollisionKernel::Maxwell),
        ("hard_sphere", CollisionKernel::HardSphere),
    ] {
        for mode in [Mode::Exact, Mode::Majorant] {
            for n0 in [200usize, 2000] {
                let id = BenchmarkId::new(format!("{name}_{mode:?}"), n0);
                group.bench_with_input(id, &n0, |b, &n0| {
                    b.iter_batched(
                        || {
                            let mut rng = stream(2, Purpose::Dynamics, 0);
                            let law = InitialLaw::Maxwellian { t0: 1.0 };
                            let v = (0..n0).map(|_| law.sample(&mut rng)).collect();
                            (
                                SystemState::new(v, n0 as f64, 0.1, kernel.clone()).unwrap(),
                                rng,
                            )
                        },
                        |(mut state, mut rng)| {
                            for _ in 0..1000 {
                                if state.n() < 2 {
                                    break;
                                }
                                black_box(state.advance(mode, f64::INFINITY, &mut rng).unwrap());
                            }
                            state
                        },
                        criterion::BatchSize::LargeInput,
                    )
                });
            }
        }
    }
    group.finish();
}

criterion_group!(benches, collide, events);
criterion_main!(benches);
