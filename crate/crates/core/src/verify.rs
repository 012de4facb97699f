//! Acceptance criteria as executable checks.
//!
//! Each `criterion_*` function runs one check at its stated scale and returns a
//! [`CriterionReport`] with the measured quantities. [`run_all`] drives them and
//! writes `verify.csv`; reports contain no timings, so repeated runs with the
//! same seed produce identical files.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, KernelConfig, Observable, RunConfig};
use crate::dynamics::{
    elastic_collide, simulate_with, DynamicsError, EventKind, Mode, SystemState,
};
use crate::ensemble::{
    bbgky_residual, chaos_defect, energy_and_mass, run_ensemble, Ensemble, EnsembleSpec,
    InitialLaw, ResidualSettings,
};
use crate::kernels::{uniform_unit_vector, CollisionKernel};
use crate::limit_models::{
    death_chain_evolve, gamma_apply, gamma_norm_check, heavy_tailed_velocity, maxwell_moment_ode,
};
use crate::pipeline::{cli_run, fmt_f64, PipelineError, Table, RUN_FILES};
use crate::rng::{stream, Purpose};
use crate::selfsim::{conserved_check, CheckMode};
use crate::stats::{ks_two_sample, total_variation};
use crate::testfn::{TestFunction, Unary};
use crate::vec3::{self, Vec3};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub metrics: Vec<(String, f64)>,
    pub detail: String,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl CriterionReport {
    fn new(id: u8, name: &'static str) -> Self {
        CriterionReport {
            id,
            name,
            passed: true,
            metrics: Vec::new(),
            detail: String::new(),
            elapsed: Duration::ZERO,
        }
    }

    fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.push((key.into(), value));
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.passed = false;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(&what.into());
        }
    }

    fn budget(&mut self, start: Instant, limit: Duration) {
        self.elapsed = start.elapsed();
        let within = self.elapsed <= limit;
        self.require(
            within,
            format!(
                "runtime {:.1}s exceeds {:.0}s",
                self.elapsed.as_secs_f64(),
                limit.as_secs_f64()
            ),
        );
    }

    /// One human-readable line.
    pub fn summary(&self) -> String {
        let metrics: Vec<String> = self
            .metrics
            .iter()
            .map(|(k, v)| format!("{k}={v:.6e}"))
            .collect();
        let mut line = format!(
            "{} criterion {:>2} ({}) [{:.1}s] {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            metrics.join(" ")
        );
        if !self.detail.is_empty() {
            line.push_str(" :: ");
            line.push_str(&self.detail);
        }
        line
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn gaussian(rng: &mut impl Rng) -> Vec3 {
    std::array::from_fn(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

pub type CollideFn = fn(Vec3, Vec3, Vec3) -> (Vec3, Vec3);

/// 1. Conservation of momentum, energy and relative speed by the collision rule.
pub fn criterion_collision_rule(events: usize, seed: u64, collide: CollideFn) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(1, "collision-rule exactness");
    let worst = (0..events.div_ceil(1 << 14))
        .into_par_iter()
        .map(|chunk| {
            let mut rng = stream(seed, Purpose::Harness(1), chunk as u64);
            let mut worst = [0.0f64; 3];
            for _ in 0..(1 << 14).min(events - chunk * (1 << 14)) {
                let scale = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
                let (vi, vj) = (
                    vec3::scale(gaussian(&mut rng), scale),
                    vec3::scale(gaussian(&mut rng), scale),
                );
                let omega = uniform_unit_vector(&mut rng);
                let (wi, wj) = collide(vi, vj, omega);
                let max_speed = [vi, vj, wi, wj]
                    .iter()
                    .map(|&v| vec3::norm(v))
                    .fold(0.0, f64::max);
                let dp = vec3::norm(vec3::sub(vec3::add(wi, wj), vec3::add(vi, vj)));
                let e0 = vec3::norm_sq(vi) + vec3::norm_sq(vj);
                let de = (vec3::norm_sq(wi) + vec3::norm_sq(wj) - e0).abs();
                let u0 = vec3::norm(vec3::sub(vi, vj));
                let du = (vec3::norm(vec3::sub(wi, wj)) - u0).abs();
                worst[0] = worst[0].max(dp / max_speed);
                worst[1] = worst[1].max(de / e0);
                worst[2] = worst[2].max(du / u0);
            }
            worst
        })
        .reduce(
            || [0.0; 3],
            |a, b| [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])],
        );
    rep.metric("events", events as f64);
    rep.metric("momentum_err_over_max_speed", worst[0]);
    rep.metric("energy_rel_err", worst[1]);
    rep.metric("relative_speed_rel_err", worst[2]);
    rep.require(
        worst[0] <= 1e-12,
        "momentum not conserved to 1e-12 max_speed",
    );
    rep.require(worst[1] <= 1e-10, "energy not conserved to 1e-10 relative");
    rep.require(
        worst[2] <= 1e-12,
        "relative speed not preserved to 1e-12 relative",
    );
    rep.budget(start, secs(10));
    rep
}

/// 2. Pathwise monotonicity of `N` and `sum |v|^2`, and parity of `N`, for hard spheres.
pub fn criterion_pathwise_dissipation(
    trajectories: usize,
    n0: usize,
    seed: u64,
) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(2, "pathwise dissipation");
    let times = [0.0, 1.0, 2.0];
    let results: Vec<Result<(u64, u64), String>> = (0..trajectories)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, Purpose::Harness(2), r as u64);
            let v: Vec<Vec3> = (0..n0).map(|_| gaussian(&mut rng)).collect();
            let mut state = SystemState::new(v, n0 as f64, 0.5, CollisionKernel::HardSphere)
                .map_err(|e| e.to_string())?;
            let (mut n_prev, mut e_prev) = (state.n(), state.kinetic_energy());
            let (mut bad, mut events) = (0u64, 0u64);
            simulate_with(&mut state, &times, Mode::Exact, false, &mut rng, |s, _| {
                events += 1;
                let (n, e) = (s.n(), s.kinetic_energy());
                if n > n_prev || e > e_prev * (1.0 + 1e-12) || n % 2 != n0 % 2 {
                    bad += 1;
                }
                n_prev = n;
                e_prev = e;
            })
            .map_err(|e| e.to_string())?;
            Ok((bad, events))
        })
        .collect();
    let (mut bad, mut events) = (0, 0);
    for r in results {
        match r {
            Ok((b, e)) => {
                bad += b;
                events += e;
            }
            Err(e) => rep.require(false, e),
        }
    }
    rep.metric("trajectories", trajectories as f64);
    rep.metric("events", events as f64);
    rep.metric("violations", bad as f64);
    rep.require(
        bad == 0,
        format!("{bad} events increased N or energy or broke parity"),
    );
    rep.budget(start, secs(60));
    rep
}

pub const RUN3_TIMES: [f64; 3] = [0.5, 1.0, 2.0];

/// The shared run: Maxwell, `N0 = lambda = 200`, `alpha = 0.5`, `M = 1000`,
/// standard Maxwellian, snapshots every 1/32 up to `t = 2`.
pub fn run3_spec(seed: u64) -> EnsembleSpec {
    let times: Vec<f64> = (0..=64).map(|k| k as f64 / 32.0).collect();
    let mut spec = EnsembleSpec::new(
        CollisionKernel::Maxwell,
        0.5,
        200,
        InitialLaw::Maxwellian { t0: 1.0 },
        times,
    );
    spec.realizations = 1000;
    spec.seed = seed;
    spec
}

pub fn run3_ensemble(seed: u64) -> Result<(Ensemble, Duration), String> {
    let start = Instant::now();
    let ens = run_ensemble(&run3_spec(seed)).map_err(|e| e.to_string())?;
    Ok((ens, start.elapsed()))
}

/// 3. Mean particle number against `n(t) = 1 / (1 + t/2)`.
pub fn criterion_mass_law(ens: &Ensemble, sim_time: Duration) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(3, "Maxwell mass law");
    let lambda = ens.spec().lambda;
    let curve = maxwell_moment_ode(1.0, 3.0, 0.5, &RUN3_TIMES).expect("valid grid");
    let disc = curve.max_relative_discrepancy();
    rep.metric("closed_form_vs_rk4", disc);
    rep.require(disc <= 1e-8, "closed form and RK4 disagree");
    for (k, &t) in RUN3_TIMES.iter().enumerate() {
        let s = ens.snapshot_index(t).expect("run-3 grid");
        let est = ens.scalar_estimate(s, |r| r.n as f64 / lambda);
        let oracle = curve.closed_form.n[k];
        let err = est.value - oracle;
        rep.metric(format!("t{t}_value"), est.value);
        rep.metric(format!("t{t}_z"), err / est.se());
        rep.require(
            err.abs() <= 3.0 * est.se(),
            format!("t={t}: |error| {:.3e} > 3 stderr", err.abs()),
        );
        rep.require(
            err.abs() <= 0.02 * oracle,
            format!("t={t}: relative error above 2%"),
        );
    }
    rep.budget(start - sim_time, secs(300));
    rep
}

/// 4. Mean energy against `E(t) = E0 / (1 + t/2)`.
pub fn criterion_energy_law(ens: &Ensemble) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(4, "Maxwell energy law");
    let lambda = ens.spec().lambda;
    let e0 = ens.spec().init.energy();
    let curve = maxwell_moment_ode(1.0, e0, 0.5, &RUN3_TIMES).expect("valid grid");
    for (k, &t) in RUN3_TIMES.iter().enumerate() {
        let s = ens.snapshot_index(t).expect("run-3 grid");
        let est = ens.scalar_estimate(s, |r| r.energy / lambda);
        let err = est.value - curve.closed_form.energy[k];
        rep.metric(format!("t{t}_value"), est.value);
        rep.metric(format!("t{t}_z"), err / est.se());
        rep.require(
            err.abs() <= 3.0 * est.se(),
            format!("t={t}: |error| {:.3e} > 3 stderr", err.abs()),
        );
    }
    rep.budget(start, secs(300));
    rep
}

/// 5. Law of `N(1)` against the death chain, `N0 = lambda = 10`.
pub fn criterion_death_chain(realizations: usize, seed: u64) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(5, "death-chain agreement");
    let mut spec = EnsembleSpec::new(
        CollisionKernel::Maxwell,
        0.5,
        10,
        InitialLaw::Maxwellian { t0: 1.0 },
        vec![0.0, 1.0],
    );
    spec.realizations = realizations;
    spec.seed = seed ^ 5;
    spec.retain_velocities = false;
    match run_ensemble(&spec) {
        Ok(ens) => {
            let chain = death_chain_evolve(10, 0.5, 10.0, &[1.0]).expect("valid chain");
            let mut counts = vec![0.0; chain.counts.len()];
            for r in 0..ens.realizations() {
                let n = ens.scalar(r, 1).n;
                counts[chain.counts.iter().position(|&c| c == n).expect("parity")] += 1.0;
            }
            let empirical: Vec<f64> = counts.iter().map(|c| c / realizations as f64).collect();
            let tv = total_variation(&empirical, &chain.p[0]);
            rep.metric("total_variation", tv);
            rep.require(tv <= 0.02, format!("total variation {tv:.4} > 0.02"));
        }
        Err(e) => rep.require(false, e.to_string()),
    }
    rep.budget(start, secs(120));
    rep
}

/// 6. `rho_l(t) <= (N0 eps)^l` and `E_l(t) <= (N0 eps)^l E0` within 2 stderr, `l = 1, 2, 3`.
pub fn criterion_a_priori_bounds(ens: &Ensemble) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(6, "a-priori bounds");
    let spec = ens.spec();
    let x = spec.n0 as f64 * spec.epsilon();
    let e0 = spec.init.energy();
    for ell in 1..=3 {
        let mut worst_e = f64::NEG_INFINITY;
        let mut worst_rho = f64::NEG_INFINITY;
        for s in 0..ens.times().len() {
            let (e, rho) = energy_and_mass(ens, ell, s);
            let be = x.powi(ell as i32) * e0;
            let br = x.powi(ell as i32);
            worst_e = worst_e.max((e.value - 2.0 * e.se()) / be);
            worst_rho = worst_rho.max((rho.value - 2.0 * rho.se()) / br);
            rep.require(
                e.value - 2.0 * e.se() <= be,
                format!("E_{ell} above bound at t={}", ens.times()[s]),
            );
            rep.require(
                rho.value - 2.0 * rho.se() <= br,
                format!("rho_{ell} above bound at t={}", ens.times()[s]),
            );
        }
        rep.metric(format!("l{ell}_energy_ratio"), worst_e);
        rep.metric(format!("l{ell}_mass_ratio"), worst_rho);
    }
    rep.budget(start, secs(60));
    rep
}

/// Gaussian test function used by criteria 7 and 8.
pub fn reference_gaussian() -> Unary {
    Unary::Gaussian {
        a: 0.5,
        c: [0.0; 3],
    }
}

/// 7. Weak hierarchy residual for `l = 1` at `t = 0.5, 1`.
pub fn criterion_bbgky(ens: &Ensemble, seed: u64) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(7, "BBGKY weak identity");
    let s_end = ens.snapshot_index(1.0).expect("run-3 grid");
    let cases = [
        ("constant", TestFunction::constant(1)),
        ("gaussian", TestFunction::unary(reference_gaussian())),
    ];
    for (k, (name, phi)) in cases.iter().enumerate() {
        let settings = ResidualSettings {
            salt: seed ^ (k as u64 + 70),
            ..ResidualSettings::default()
        };
        match bbgky_residual(ens, phi, s_end, &settings) {
            Ok(series) => {
                for w in &series.warnings {
                    rep.require(false, w.clone());
                }
                for t in [0.5, 1.0] {
                    let s = ens.snapshot_index(t).expect("run-3 grid");
                    let (res, se) = series.at(s);
                    rep.metric(format!("{name}_t{t}_residual"), res);
                    rep.metric(format!("{name}_t{t}_stderr"), se);
                    rep.require(
                        res.abs() < 3.0 * se,
                        format!("{name} t={t}: |residual| {:.3e} >= 3 stderr", res.abs()),
                    );
                }
            }
            Err(e) => rep.require(false, e.to_string()),
        }
    }
    rep.budget(start, secs(600));
    rep
}

pub const CHAOS_N0: [usize; 4] = [50, 100, 200, 400];

/// 8. Chaos defect at `t = 1` decreasing in `N0`.
pub fn criterion_chaos(realizations: usize, seed: u64) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(8, "propagation-of-chaos trend");
    let phi = reference_gaussian();
    let mut defects = Vec::new();
    for &n0 in &CHAOS_N0 {
        let mut spec = EnsembleSpec::new(
            CollisionKernel::Maxwell,
            0.5,
            n0,
            InitialLaw::Maxwellian { t0: 1.0 },
            vec![0.0, 1.0],
        );
        spec.realizations = realizations;
        spec.seed = seed ^ (n0 as u64) << 8;
        match run_ensemble(&spec)
            .map_err(|e| e.to_string())
            .and_then(|e| chaos_defect(&e, &phi, &phi, 1).map_err(|e| e.to_string()))
        {
            Ok(d) => {
                rep.metric(format!("n0_{n0}_defect"), d.value);
                rep.metric(format!("n0_{n0}_stderr"), d.stderr.unwrap_or(f64::NAN));
                defects.push((n0, d.value, d.stderr.unwrap_or(f64::INFINITY)));
            }
            Err(e) => {
                rep.require(false, e);
                rep.budget(start, secs(900));
                return rep;
            }
        }
    }
    for w in defects.windows(2) {
        let slack = 2.0 * w[0].2.hypot(w[1].2);
        rep.require(
            w[1].1 <= w[0].1 + slack,
            format!("defect rises from N0={} to N0={}", w[0].0, w[1].0),
        );
    }
    let (first, last) = (defects[0].1, defects[defects.len() - 1].1);
    rep.metric("ratio_last_over_first", last / first);
    rep.require(last < first / 2.0, "defect(400) not below defect(50)/2");
    rep.budget(start, secs(900));
    rep
}

/// 9. Operator bound for `Gamma` and its value on constants.
pub fn criterion_gamma_bound(samples: usize, seed: u64) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(9, "Gamma-operator bound");
    let mut worst = 0.0f64;
    for k in 1..=4 {
        for alpha in [0.1, 0.5, 0.9] {
            match gamma_norm_check(k, alpha, &CollisionKernel::Maxwell, samples, 16, seed) {
                Ok(r) => worst = worst.max(r.max_ratio),
                Err(e) => rep.require(false, e.to_string()),
            }
        }
    }
    rep.metric("max_ratio", worst);
    let mut rng = stream(seed, Purpose::Harness(9), 0);
    let mut worst_const = 0.0f64;
    for k in 1..=4 {
        for alpha in [0.1, 0.5, 0.9] {
            for _ in 0..100 {
                let v: Vec<Vec3> = (0..=k).map(|_| heavy_tailed_velocity(&mut rng)).collect();
                let g = gamma_apply(
                    &TestFunction::constant(k),
                    &v,
                    &CollisionKernel::Maxwell,
                    alpha,
                    1,
                    &mut rng,
                );
                worst_const = worst_const.max((g.value + alpha * k as f64).abs());
            }
        }
    }
    rep.metric("constant_abs_err", worst_const);
    rep.require(worst_const <= 1e-12, "Gamma 1 differs from -alpha k");
    rep.budget(start, secs(120));
    rep
}

/// First-annihilation times of hard-sphere systems with `N0 = lambda = 10`.
pub fn first_annihilation_times(
    mode: Mode,
    realizations: usize,
    seed: u64,
    inject_majorant_fault: bool,
) -> Result<Vec<f64>, DynamicsError> {
    (0..realizations)
        .into_par_iter()
        .map(|r| {
            let salt = match mode {
                Mode::Exact => 100,
                Mode::Majorant => 101,
            };
            let mut rng = stream(seed, Purpose::Harness(salt), r as u64);
            let v: Vec<Vec3> = (0..10).map(|_| gaussian(&mut rng)).collect();
            let mut state = SystemState::new(v, 10.0, 0.5, CollisionKernel::HardSphere)?;
            if inject_majorant_fault {
                state.override_max_speed(0.25 * state.max_speed());
            }
            loop {
                let ev = state
                    .advance(mode, f64::INFINITY, &mut rng)?
                    .expect("infinite horizon");
                if let EventKind::Annihilation { .. } = ev.kind {
                    return Ok(ev.time);
                }
            }
        })
        .collect()
}

/// 10. Exact and majorant schedulers give the same first-annihilation law.
pub fn criterion_sampler_equivalence(
    realizations: usize,
    seed: u64,
    inject_majorant_fault: bool,
) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(10, "sampler equivalence");
    let exact = first_annihilation_times(Mode::Exact, realizations, seed, false);
    let major = first_annihilation_times(Mode::Majorant, realizations, seed, inject_majorant_fault);
    match (exact, major) {
        (Ok(a), Ok(b)) => {
            let ks = ks_two_sample(&a, &b);
            rep.metric("ks_statistic", ks.statistic);
            rep.metric("p_value", ks.p_value);
            rep.require(
                ks.p_value >= 0.01,
                format!("KS p-value {:.4} < 0.01", ks.p_value),
            );
        }
        (Err(e), _) | (_, Err(e)) => rep.require(false, format!("aborted: {e}")),
    }
    rep.budget(start, secs(300));
    rep
}

/// 11. Rescaled moments equal `(1, 0, 3/2)`: exactly for the same sample, statistically across halves.
pub fn criterion_self_similar(ens: &Ensemble) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(11, "self-similar conservation");
    let snaps: Vec<usize> = RUN3_TIMES
        .iter()
        .map(|&t| ens.snapshot_index(t).expect("run-3 grid"))
        .collect();
    let all: Vec<usize> = (0..ens.times().len()).collect();
    match conserved_check(ens, &all, CheckMode::SameSample) {
        Ok(rows) => {
            let worst = rows.iter().map(|r| r.max_abs()).fold(0.0, f64::max);
            rep.metric("same_sample_max_dev", worst);
            rep.require(worst <= 1e-10, "same-sample deviation above 1e-10");
        }
        Err(e) => rep.require(false, e.to_string()),
    }
    match conserved_check(ens, &snaps, CheckMode::SplitSample) {
        Ok(rows) => {
            for r in rows {
                let z = r.max_z().unwrap_or(f64::INFINITY);
                rep.metric(format!("split_t{}_max_z", r.t), z);
                rep.require(
                    z <= 3.0,
                    format!("split-sample deviation at t={} is {z:.2} stderr", r.t),
                );
            }
        }
        Err(e) => rep.require(false, e.to_string()),
    }
    rep.budget(start, secs(120));
    rep
}

/// A reduced run-3 configuration writing into `dir`.
pub fn reproducibility_config(seed: u64, dir: &Path) -> RunConfig {
    RunConfig {
        kernel: KernelConfig::maxwell(),
        alpha: 0.5,
        n0: 200,
        lambda: None,
        t_end: 2.0,
        snapshot_count: None,
        ensemble_size: 64,
        seed,
        init: InitialLaw::Maxwellian { t0: 1.0 },
        mode: Mode::Exact,
        observables: vec![
            Observable {
                id: "mass".into(),
                ell: Some(1),
                phi: TestFunction::constant(1),
            },
            Observable {
                id: "gauss".into(),
                ell: Some(1),
                phi: TestFunction::unary(reference_gaussian()),
            },
            Observable {
                id: "pair_gauss".into(),
                ell: Some(2),
                phi: TestFunction::Tensor(vec![reference_gaussian(), reference_gaussian()]),
            },
        ],
        output_dir: dir.to_path_buf(),
        omega_draws: 8,
        pair_samples: 32,
        memory_cap: crate::ensemble::DEFAULT_MEMORY_CAP,
        base_dir: PathBuf::new(),
    }
    .resolved()
    .expect("valid built-in config")
}

/// 12. Two runs with the same seed, on one and on two worker threads, write identical CSVs.
pub fn criterion_reproducibility(seed: u64, scratch: &Path) -> CriterionReport {
    let start = Instant::now();
    let mut rep = CriterionReport::new(12, "reproducibility");
    let run = |threads: usize, name: &str| -> Result<PathBuf, PipelineError> {
        let dir = scratch.join(name);
        let cfg = reproducibility_config(seed, &dir);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(|| cli_run(&cfg))?;
        Ok(dir)
    };
    match (run(1, "repro_a"), run(2, "repro_b")) {
        (Ok(a), Ok(b)) => {
            let mut identical = 0;
            for f in RUN_FILES {
                let (x, y) = (std::fs::read(a.join(f)), std::fs::read(b.join(f)));
                match (x, y) {
                    (Ok(x), Ok(y)) if x == y => identical += 1,
                    (Ok(_), Ok(_)) => rep.require(false, format!("{f} differs between runs")),
                    _ => rep.require(false, format!("{f} missing")),
                }
            }
            rep.metric("identical_files", identical as f64);
        }
        (Err(e), _) | (_, Err(e)) => rep.require(false, e.to_string()),
    }
    rep.budget(start, secs(300));
    rep
}

/// Options of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Criteria to run; all when empty.
    #[serde(default)]
    pub criteria: Vec<u8>,
    #[serde(default = "default_verify_dir")]
    pub output_dir: PathBuf,
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_verify_dir() -> PathBuf {
    PathBuf::from("verify_out")
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: default_seed(),
            criteria: Vec::new(),
            output_dir: default_verify_dir(),
        }
    }
}

impl VerifyConfig {
    /// Reads a JSON file; a relative `output_dir` is taken relative to the file.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: VerifyConfig =
            serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
                key: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        if let Some(bad) = cfg.criteria.iter().find(|&&c| !(1..=12).contains(&c)) {
            return Err(ConfigError::Invalid {
                key: "criteria".into(),
                reason: format!("no criterion {bad}"),
            });
        }
        if cfg.output_dir.is_relative() {
            if let Some(base) = path.parent() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn wants(&self, id: u8) -> bool {
        self.criteria.is_empty() || self.criteria.contains(&id)
    }
}

/// Runs the selected criteria, calling `progress` after each, and writes `verify.csv`.
pub fn run_all<F: FnMut(&CriterionReport)>(
    cfg: &VerifyConfig,
    mut progress: F,
) -> Result<Vec<CriterionReport>, PipelineError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| PipelineError::Io {
        path: cfg.output_dir.display().to_string(),
        source,
    })?;
    let seed = cfg.seed;
    let mut reports = Vec::new();
    let mut push = |r: CriterionReport, reports: &mut Vec<CriterionReport>| {
        progress(&r);
        reports.push(r);
    };
    if cfg.wants(1) {
        push(
            criterion_collision_rule(1_000_000, seed, elastic_collide),
            &mut reports,
        );
    }
    if cfg.wants(2) {
        push(
            criterion_pathwise_dissipation(1000, 100, seed),
            &mut reports,
        );
    }
    if [3, 4, 6, 7, 11].iter().any(|&c| cfg.wants(c)) {
        match run3_ensemble(seed) {
            Ok((ens, sim)) => {
                if cfg.wants(3) {
                    push(criterion_mass_law(&ens, sim), &mut reports);
                }
                if cfg.wants(4) {
                    push(criterion_energy_law(&ens), &mut reports);
                }
                if cfg.wants(6) {
                    push(criterion_a_priori_bounds(&ens), &mut reports);
                }
                if cfg.wants(7) {
                    push(criterion_bbgky(&ens, seed), &mut reports);
                }
                if cfg.wants(11) {
                    push(criterion_self_similar(&ens), &mut reports);
                }
            }
            Err(e) => {
                for (id, name) in [
                    (3, "Maxwell mass law"),
                    (4, "Maxwell energy law"),
                    (6, "a-priori bounds"),
                    (7, "BBGKY weak identity"),
                    (11, "self-similar conservation"),
                ] {
                    if cfg.wants(id) {
                        let mut r = CriterionReport::new(id, name);
                        r.require(false, format!("run-3 ensemble failed: {e}"));
                        push(r, &mut reports);
                    }
                }
            }
        }
    }
    if cfg.wants(5) {
        push(criterion_death_chain(10_000, seed), &mut reports);
    }
    if cfg.wants(8) {
        push(criterion_chaos(2000, seed), &mut reports);
    }
    if cfg.wants(9) {
        push(criterion_gamma_bound(10_000, seed), &mut reports);
    }
    if cfg.wants(10) {
        push(
            criterion_sampler_equivalence(10_000, seed, false),
            &mut reports,
        );
    }
    if cfg.wants(12) {
        push(
            criterion_reproducibility(seed, &cfg.output_dir),
            &mut reports,
        );
    }
    reports.sort_by_key(|r| r.id);
    write_report(&reports, &cfg.output_dir.join("verify.csv"))?;
    Ok(reports)
}

/// `verify.csv`: one row per metric, plus a `passed` row per criterion.
pub fn write_report(reports: &[CriterionReport], path: &Path) -> Result<(), PipelineError> {
    let mut t = Table::new(&["criterion", "name", "metric", "value"]);
    for r in reports {
        t.row(&[
            r.id.to_string(),
            r.name.to_string(),
            "passed".into(),
            if r.passed { "1" } else { "0" }.into(),
        ]);
        for (k, v) in &r.metrics {
            t.row(&[r.id.to_string(), r.name.to_string(), k.clone(), fmt_f64(*v)]);
        }
    }
    t.write(path)
}
