//! Property tests for the invariants of each module.

use kal_core::ensemble::{energy_and_mass, run_ensemble, tuple_sum};
use kal_core::limit_models::{death_chain_evolve, maxwell_moment_ode, random_unit_test_function};
use kal_core::rng::{stream, Purpose};
use kal_core::selfsim::{compute_frames, conserved_check};
use kal_core::{
    elastic_collide, simulate_with, CheckMode, CollisionKernel, EnsembleSpec, EventKind,
    InitialLaw, Mode, SystemState, Vec3,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn vec3() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1e3f64..1e3)
}

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        [r * phi.cos(), r * phi.sin(), z]
    })
}

fn kernel() -> impl Strategy<Value = CollisionKernel> {
    prop_oneof![
        Just(CollisionKernel::Maxwell),
        Just(CollisionKernel::HardSphere)
    ]
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Exact), Just(Mode::Majorant)]
}

fn norm(v: Vec3) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn elastic_events_conserve(vi in vec3(), vj in vec3(), omega in unit()) {
        let (wi, wj) = elastic_collide(vi, vj, omega);
        let max_speed = [vi, vj, wi, wj].iter().map(|&v| norm(v)).fold(0.0, f64::max);
        for k in 0..3 {
            prop_assert!((wi[k] + wj[k] - vi[k] - vj[k]).abs() <= 1e-12 * max_speed);
        }
        let e0 = norm(vi).powi(2) + norm(vj).powi(2);
        let e1 = norm(wi).powi(2) + norm(wj).powi(2);
        prop_assert!((e1 - e0).abs() <= 1e-10 * e0);
        let u0 = norm(diff(vi, vj));
        prop_assert!((norm(diff(wi, wj)) - u0).abs() <= 1e-12 * u0.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn kernels_respect_growth_bound(u in vec3(), k in kernel()) {
        prop_assert!(k.sigma_b(u) <= k.growth_bound(u) * (1.0 + 1e-15));
    }

    #[test]
    fn streams_differ_across_realizations(seed in any::<u64>(), a in 0u64..1 << 40, b in 0u64..1 << 40) {
        prop_assume!(a != b);
        let x: [u64; 2] = stream(seed, Purpose::Dynamics, a).random();
        let y: [u64; 2] = stream(seed, Purpose::Dynamics, b).random();
        prop_assert_ne!(x, y);
    }

    #[test]
    fn closed_form_matches_rk4(n0 in 0.1f64..5.0, e0 in 0.1f64..10.0, alpha in 0.0f64..=1.0, t in 0.1f64..5.0) {
        let curve = maxwell_moment_ode(n0, e0, alpha, &[0.0, t / 2.0, t]).unwrap();
        prop_assert!(curve.max_relative_discrepancy() <= 1e-8);
    }

    #[test]
    fn death_chain_is_a_parity_preserving_law(half in 1usize..30, alpha in 0.01f64..=1.0, t in 0.0f64..4.0) {
        let n0 = 2 * half;
        let chain = death_chain_evolve(n0, alpha, n0 as f64, &[0.0, t]).unwrap();
        prop_assert!(chain.counts.iter().all(|&n| n <= n0 && n % 2 == 0));
        for k in 0..2 {
            prop_assert!((chain.total_mass(k) - 1.0).abs() <= 1e-9);
            prop_assert!(chain.p[k].iter().all(|&p| p >= -1e-12));
        }
        prop_assert!(chain.mean_count(1) <= n0 as f64 + 1e-9);
    }

    #[test]
    fn tuple_sums_are_exchangeable(seed in any::<u64>(), n in 3usize..12, arity in 1usize..=3) {
        let mut rng = stream(seed, Purpose::Harness(0), 0);
        let phi = random_unit_test_function(arity, &mut rng);
        let mut v: Vec<Vec3> = (0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>() * 4.0 - 2.0)).collect();
        let before = tuple_sum(&phi, &v).unwrap();
        v.shuffle(&mut rng);
        prop_assert_eq!(before.to_bits(), tuple_sum(&phi, &v).unwrap().to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trajectories_dissipate_and_conserve(
        seed in any::<u64>(),
        half in 1usize..20,
        alpha in 0.0f64..=1.0,
        k in kernel(),
        m in mode(),
    ) {
        let n0 = 2 * half;
        let mut rng = stream(seed, Purpose::Dynamics, 0);
        let law = InitialLaw::Maxwellian { t0: 1.0 };
        let v: Vec<Vec3> = (0..n0).map(|_| law.sample(&mut rng)).collect();
        let mut state = SystemState::new(v, n0 as f64, alpha, k).unwrap();
        let (mut n, mut e, mut p) = (state.n(), state.kinetic_energy(), state.momentum());
        let mut failures = Vec::new();
        simulate_with(&mut state, &[0.0, 1.0, 3.0], m, false, &mut rng, |s, ev| {
            let scale = s.max_speed().max(1.0) * n0 as f64;
            match ev.kind {
                EventKind::Elastic { .. } => {
                    if s.n() != n || (0..3).any(|a| (s.momentum()[a] - p[a]).abs() > 1e-12 * scale)
                        || (s.kinetic_energy() - e).abs() > 1e-10 * e
                    {
                        failures.push(format!("elastic event at {}", ev.time));
                    }
                }
                EventKind::Annihilation { .. } => {
                    if s.n() + 2 != n || s.kinetic_energy() > e * (1.0 + 1e-12) {
                        failures.push(format!("annihilation at {}", ev.time));
                    }
                }
                EventKind::Null => {}
            }
            if s.n() % 2 != n0 % 2 {
                failures.push("parity".into());
            }
            n = s.n();
            e = s.kinetic_energy();
            p = s.momentum();
        })
        .unwrap();
        prop_assert!(failures.is_empty(), "{:?}", failures);
        if let Some(err) = state.rate_cache_error() {
            prop_assert!(err <= 1e-9);
        }
    }

    #[test]
    fn same_sample_rescaled_moments_are_exact(
        seed in any::<u64>(),
        half in 2usize..15,
        alpha in 0.0f64..0.9,
        k in kernel(),
    ) {
        let times: Vec<f64> = (0..=8).map(|s| s as f64 / 8.0).collect();
        let mut spec = EnsembleSpec::new(k, alpha, 2 * half, InitialLaw::Bimodal { offset: 1.5, t0: 0.5 }, times);
        spec.realizations = 3;
        spec.seed = seed;
        let ens = run_ensemble(&spec).unwrap();
        let frames = compute_frames(&ens).unwrap();
        prop_assert_eq!(frames[0].tau, 0.0);
        prop_assert!(frames.windows(2).all(|w| w[1].tau >= w[0].tau));
        let surviving: Vec<usize> = (0..ens.times().len())
            .filter(|&s| (0..ens.realizations()).map(|r| ens.scalar(r, s).n).sum::<usize>() > 1)
            .collect();
        let rows = conserved_check(&ens, &surviving, CheckMode::SameSample).unwrap();
        prop_assert_eq!(rows.len(), surviving.len());
        for r in rows {
            prop_assert!(r.max_abs() <= 1e-10, "{:?}", r);
        }
    }
}

#[test]
fn ensemble_energy_and_mass_decrease_in_time() {
    let times: Vec<f64> = (0..=8).map(|s| s as f64 / 4.0).collect();
    let mut spec = EnsembleSpec::new(
        CollisionKernel::HardSphere,
        0.5,
        40,
        InitialLaw::Maxwellian { t0: 1.0 },
        times,
    );
    spec.realizations = 200;
    let ens = run_ensemble(&spec).unwrap();
    for ell in 1..=3 {
        for s in 1..ens.times().len() {
            let (e0, r0) = energy_and_mass(&ens, ell, s - 1);
            let (e1, r1) = energy_and_mass(&ens, ell, s);
            assert!(
                e1.value <= e0.value + 2.0 * e0.se().hypot(e1.se()),
                "E_{ell} rises at step {s}"
            );
            assert!(
                r1.value <= r0.value + 2.0 * r0.se().hypot(r1.se()),
                "rho_{ell} rises at step {s}"
            );
        }
    }
}
