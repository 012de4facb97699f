//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Duration;

use kal_core::verify::{self, CriterionReport};
use kal_core::{elastic_collide, Ensemble, Vec3};

const SEED: u64 = 20_240_601;

fn run3() -> &'static (Ensemble, Duration) {
    static RUN3: OnceLock<(Ensemble, Duration)> = OnceLock::new();
    RUN3.get_or_init(|| verify::run3_ensemble(SEED).expect("run-3 ensemble"))
}

fn check(report: CriterionReport) {
    let _ = writeln!(std::io::stderr().lock(), "{}", report.summary());
    assert!(report.passed, "{}", report.summary());
}

#[test]
fn criterion_01_collision_rule() {
    check(verify::criterion_collision_rule(
        1_000_000,
        SEED,
        elastic_collide,
    ));
}

#[test]
fn criterion_01_detects_broken_rule() {
    fn wrong_sign(vi: Vec3, vj: Vec3, omega: Vec3) -> (Vec3, Vec3) {
        let k = (0..3).map(|a| (vi[a] - vj[a]) * omega[a]).sum::<f64>();
        (
            std::array::from_fn(|a| vi[a] - k * omega[a]),
            std::array::from_fn(|a| vj[a] - k * omega[a]),
        )
    }
    let r = verify::criterion_collision_rule(10_000, SEED, wrong_sign);
    assert!(!r.passed);
}

#[test]
fn criterion_02_pathwise_dissipation() {
    check(verify::criterion_pathwise_dissipation(1000, 100, SEED));
}

#[test]
fn criterion_03_mass_law() {
    let (ens, sim) = run3();
    check(verify::criterion_mass_law(ens, *sim));
}

#[test]
fn criterion_04_energy_law() {
    check(verify::criterion_energy_law(&run3().0));
}

#[test]
fn criterion_05_death_chain() {
    check(verify::criterion_death_chain(10_000, SEED));
}

#[test]
fn criterion_06_a_priori_bounds() {
    check(verify::criterion_a_priori_bounds(&run3().0));
}

#[test]
fn criterion_07_bbgky() {
    check(verify::criterion_bbgky(&run3().0, SEED));
}

#[test]
fn criterion_08_chaos() {
    check(verify::criterion_chaos(2000, SEED));
}

#[test]
fn criterion_09_gamma_bound() {
    check(verify::criterion_gamma_bound(10_000, SEED));
}

#[test]
fn criterion_10_sampler_equivalence() {
    check(verify::criterion_sampler_equivalence(10_000, SEED, false));
}

#[test]
fn criterion_10_majorant_fault_is_reported() {
    let r = verify::criterion_sampler_equivalence(200, SEED, true);
    assert!(!r.passed);
    assert!(r.detail.contains("majorant"), "{}", r.detail);
}

#[test]
fn criterion_11_self_similar() {
    check(verify::criterion_self_similar(&run3().0));
}

#[test]
fn criterion_12_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    check(verify::criterion_reproducibility(SEED, dir.path()));
}
