//! Reference solutions for the limit dynamics.
//!
//! * Moment laws of the annihilation Boltzmann equation for Maxwell molecules,
//!   in closed form and by RK4 for cross-validation.
//! * The particle-number death chain, which is the exact N-marginal of the
//!   master equation when the collision rate does not depend on velocities.
//! * The hierarchy operator `Gamma^alpha_{k;k+1}` acting on test functions,
//!   its operator-norm bound, and the uniqueness contraction factor.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::elastic_collide;
use crate::kernels::{uniform_unit_vector, CollisionKernel};
use crate::rng::{stream, Purpose};
use crate::stats::{mean_stderr, Estimate};
use crate::testfn::{TestFunction, Unary};
use crate::vec3::{self, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum LimitError {
    #[error("time grid must be sorted and non-negative")]
    InvalidGrid,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("kernel has unbounded collision frequency; the operator bound needs sup sigma_b")]
    UnboundedKernel,
    #[error(
        "Gamma bound violated: |{value}| > {bound} + 3*{stderr} (k = {k}, alpha = {alpha}, sample {sample})"
    )]
    BoundViolated {
        k: usize,
        alpha: f64,
        sample: usize,
        value: f64,
        bound: f64,
        stderr: f64,
    },
}

fn check_grid(t_grid: &[f64]) -> Result<(), LimitError> {
    if t_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite())
        || t_grid.windows(2).any(|w| w[1] < w[0])
    {
        return Err(LimitError::InvalidGrid);
    }
    Ok(())
}

fn rk4_step<const D: usize, F: Fn(&[f64; D]) -> [f64; D]>(y: &mut [f64; D], h: f64, f: &F) {
    let k1 = f(y);
    let y2: [f64; D] = std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]);
    let k2 = f(&y2);
    let y3: [f64; D] = std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]);
    let k3 = f(&y3);
    let y4: [f64; D] = std::array::from_fn(|i| y[i] + h * k3[i]);
    let k4 = f(&y4);
    for i in 0..D {
        y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSeries {
    pub n: Vec<f64>,
    pub energy: Vec<f64>,
}

/// Number and energy density curves for Maxwell molecules.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCurve {
    pub t_grid: Vec<f64>,
    pub closed_form: MomentSeries,
    pub rk4: MomentSeries,
}

impl OracleCurve {
    /// Largest relative difference between the closed form and RK4.
    pub fn max_relative_discrepancy(&self) -> f64 {
        let rel = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs() / x.abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max)
        };
        rel(&self.closed_form.n, &self.rk4.n).max(rel(&self.closed_form.energy, &self.rk4.energy))
    }
}

/// Solves `n' = -alpha n^2`, `E' = -alpha n E` from `(n0, e0)`.
///
/// With `sigma_b = 1` the loss term integrates to `n^2` (mass) and `n E`
/// (energy), giving `n(t) = n0 / (1 + alpha n0 t)` and `E(t) = E0 / (1 + alpha n0 t)`.
pub fn maxwell_moment_ode(
    n0: f64,
    e0: f64,
    alpha: f64,
    t_grid: &[f64],
) -> Result<OracleCurve, LimitError> {
    check_grid(t_grid)?;
    if !(n0 > 0.0 && e0 >= 0.0 && (0.0..=1.0).contains(&alpha)) {
        return Err(LimitError::InvalidArgument(format!(
            "n0 = {n0}, e0 = {e0}, alpha = {alpha}"
        )));
    }
    let decay = |t: f64| 1.0 / (1.0 + alpha * n0 * t);
    let closed_form = MomentSeries {
        n: t_grid.iter().map(|&t| n0 * decay(t)).collect(),
        energy: t_grid.iter().map(|&t| e0 * decay(t)).collect(),
    };
    let rhs = |y: &[f64; 2]| [-alpha * y[0] * y[0], -alpha * y[0] * y[1]];
    let h_max = 2e-3 / (1.0 + alpha * n0);
    let mut y = [n0, e0];
    let mut t = 0.0;
    let mut rk4 = MomentSeries {
        n: Vec::with_capacity(t_grid.len()),
        energy: Vec::with_capacity(t_grid.len()),
    };
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / h_max).ceil() as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                rk4_step(&mut y, h, &rhs);
            }
            t = target;
        }
        rk4.n.push(y[0]);
        rk4.energy.push(y[1]);
    }
    Ok(OracleCurve {
        t_grid: t_grid.to_vec(),
        closed_form,
        rk4,
    })
}

/// Law of the particle count `N(t)` over the lattice `{N0, N0 - 2, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeathChainDistribution {
    pub t_grid: Vec<f64>,
    /// Particle counts in increasing order, all with the parity of `N0`.
    pub counts: Vec<usize>,
    /// `p[k][s]` = P(N(t_k) = counts[s]).
    pub p: Vec<Vec<f64>>,
}

impl DeathChainDistribution {
    pub fn total_mass(&self, k: usize) -> f64 {
        self.p[k].iter().sum()
    }

    pub fn mean_count(&self, k: usize) -> f64 {
        self.p[k]
            .iter()
            .zip(&self.counts)
            .map(|(p, &n)| p * n as f64)
            .sum()
    }

    pub fn probability(&self, k: usize, n: usize) -> f64 {
        self.counts
            .iter()
            .position(|&c| c == n)
            .map_or(0.0, |s| self.p[k][s])
    }
}

/// Integrates `dP_N/dt = -r_N P_N + r_{N+2} P_{N+2}` with `r_N = alpha N(N-1) / (2 lambda)`
/// from `P(0) = delta_{N0}`.
pub fn death_chain_evolve(
    n0: usize,
    alpha: f64,
    lambda: f64,
    t_grid: &[f64],
) -> Result<DeathChainDistribution, LimitError> {
    check_grid(t_grid)?;
    if n0 == 0 || !(lambda > 0.0) || !(0.0..=1.0).contains(&alpha) {
        return Err(LimitError::InvalidArgument(format!(
            "N0 = {n0}, lambda = {lambda}, alpha = {alpha}"
        )));
    }
    let counts: Vec<usize> = (n0 % 2..=n0).step_by(2).collect();
    let rates: Vec<f64> = counts
        .iter()
        .map(|&n| alpha * (n * n.saturating_sub(1)) as f64 / (2.0 * lambda))
        .collect();
    let top = *rates.last().unwrap();
    let h_max = if top > 0.0 {
        0.01f64.min(0.1 / top)
    } else {
        0.01
    };
    let s = counts.len();
    let rhs = |p: &[f64]| -> Vec<f64> {
        (0..s)
            .map(|i| {
                -rates[i] * p[i]
                    + if i + 1 < s {
                        rates[i + 1] * p[i + 1]
                    } else {
                        0.0
                    }
            })
            .collect()
    };
    let mut p = vec![0.0; s];
    p[s - 1] = 1.0;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / h_max).ceil() as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                let k1 = rhs(&p);
                let y2: Vec<f64> = p.iter().zip(&k1).map(|(y, k)| y + 0.5 * h * k).collect();
                let k2 = rhs(&y2);
                let y3: Vec<f64> = p.iter().zip(&k2).map(|(y, k)| y + 0.5 * h * k).collect();
                let k3 = rhs(&y3);
                let y4: Vec<f64> = p.iter().zip(&k3).map(|(y, k)| y + h * k).collect();
                let k4 = rhs(&y4);
                for i in 0..s {
                    p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            t = target;
        }
        out.push(p.clone());
    }
    Ok(DeathChainDistribution {
        t_grid: t_grid.to_vec(),
        counts,
        p: out,
    })
}

/// Monte Carlo value of an angular collision integral with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `Gamma^alpha_{k;k+1} Phi_k (V_{k+1})`:
/// `sum_i int B(v_i - v_{k+1}, w) [(1-alpha) Phi_k(V^{i,k+1}) - Phi_k(V_k)] dw`,
/// where `V^{i,k+1}` replaces `v_i` by its post-collision velocity against `v_{k+1}`.
///
/// Each angular integral is `sigma_b` times an average over `omega_samples`
/// draws from the kernel's own angular law. Constant `Phi` is integrated exactly.
pub fn gamma_apply<R: Rng + ?Sized>(
    phi: &TestFunction,
    v: &[Vec3],
    kernel: &CollisionKernel,
    alpha: f64,
    omega_samples: usize,
    rng: &mut R,
) -> GammaEstimate {
    let k = phi.arity();
    assert_eq!(v.len(), k + 1, "Gamma_k;k+1 needs k+1 velocities");
    let partner = v[k];
    let base = phi.eval(&v[..k]);
    let mut value = 0.0;
    let mut var = 0.0;
    let mut scratch: Vec<Vec3> = v[..k].to_vec();
    for i in 0..k {
        let u = vec3::sub(v[i], partner);
        let sigma = kernel.sigma_b(u);
        if sigma == 0.0 {
            continue;
        }
        if let Some(c) = phi.constant_value() {
            value += sigma * ((1.0 - alpha) * c - c);
            continue;
        }
        let m = omega_samples.max(1);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let omega = kernel.sample_omega(u, rng);
            let (vi_post, _) = elastic_collide(v[i], partner, omega);
            scratch[i] = vi_post;
            let g = (1.0 - alpha) * phi.eval(&scratch) - base;
            s1 += g;
            s2 += g * g;
        }
        scratch[i] = v[i];
        let mean = s1 / m as f64;
        value += sigma * mean;
        if m > 1 {
            let sample_var = ((s2 - m as f64 * mean * mean) / (m - 1) as f64).max(0.0);
            var += sigma * sigma * sample_var / m as f64;
        }
    }
    GammaEstimate {
        value,
        stderr: var.sqrt(),
    }
}

/// In-tuple collision operator
/// `sum_{i<j} int B(v_i - v_j, w) [(1-alpha) Phi(V^{i,j}) - Phi(V)] dw`.
pub fn pair_operator_apply<R: Rng + ?Sized>(
    phi: &TestFunction,
    v: &[Vec3],
    kernel: &CollisionKernel,
    alpha: f64,
    omega_samples: usize,
    rng: &mut R,
) -> GammaEstimate {
    let l = phi.arity();
    assert_eq!(v.len(), l);
    let base = phi.eval(v);
    let mut value = 0.0;
    let mut var = 0.0;
    let mut scratch = v.to_vec();
    for i in 0..l {
        for j in (i + 1)..l {
            let u = vec3::sub(v[i], v[j]);
            let sigma = kernel.sigma_b(u);
            if sigma == 0.0 {
                continue;
            }
            if let Some(c) = phi.constant_value() {
                value += sigma * ((1.0 - alpha) * c - c);
                continue;
            }
            let m = omega_samples.max(1);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..m {
                let omega = kernel.sample_omega(u, rng);
                let (a, b) = elastic_collide(v[i], v[j], omega);
                scratch[i] = a;
                scratch[j] = b;
                let g = (1.0 - alpha) * phi.eval(&scratch) - base;
                s1 += g;
                s2 += g * g;
            }
            scratch[i] = v[i];
            scratch[j] = v[j];
            let mean = s1 / m as f64;
            value += sigma * mean;
            if m > 1 {
                var += sigma * sigma * ((s2 - m as f64 * mean * mean) / (m - 1) as f64).max(0.0)
                    / m as f64;
            }
        }
    }
    GammaEstimate {
        value,
        stderr: var.sqrt(),
    }
}

/// Weak form `<(1-alpha) Q(f,f) - alpha Q_-(f,f), phi>` by two-fold Monte Carlo.
///
/// Velocities `v` and `v_*` are drawn from two independent samples of `f`
/// and `omega` uniformly on the sphere with weight `4 pi B(u, omega)`; the
/// integrand is symmetrized in `(v, v_*)`. This route shares no sampling
/// code with [`gamma_apply`].
pub fn annihilation_weak_form<R: Rng + ?Sized>(
    phi: &Unary,
    sample_a: &[Vec3],
    sample_b: &[Vec3],
    kernel: &CollisionKernel,
    alpha: f64,
    draws: usize,
    rng: &mut R,
) -> Estimate {
    let values: Vec<f64> = (0..draws)
        .map(|_| {
            let v = sample_a[rng.random_range(0..sample_a.len())];
            let w = sample_b[rng.random_range(0..sample_b.len())];
            let omega = uniform_unit_vector(rng);
            let u = vec3::sub(v, w);
            let weight = match kernel.density(u, omega) {
                Ok(b) => 4.0 * std::f64::consts::PI * b,
                Err(_) => return 0.0,
            };
            let (vp, wp) = elastic_collide(v, w, omega);
            let (pv, pw) = (phi.eval(v), phi.eval(w));
            let gain = 0.5 * (phi.eval(vp) + phi.eval(wp) - pv - pw);
            let loss = 0.5 * (pv + pw);
            weight * ((1.0 - alpha) * gain - alpha * loss)
        })
        .collect();
    mean_stderr(&values)
}

/// Draws a random tensor test function with `sup |Phi| = 1`.
pub fn random_unit_test_function<R: Rng + ?Sized>(arity: usize, rng: &mut R) -> TestFunction {
    let normal = |rng: &mut R| -> f64 {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    };
    let mut factors: Vec<Unary> = (0..arity)
        .map(|_| match rng.random_range(0..4) {
            0 => Unary::one(),
            1 => Unary::Gaussian {
                a: 0.1 + 2.0 * rng.random::<f64>(),
                c: std::array::from_fn(|_| normal(rng)),
            },
            2 => Unary::Fourier {
                k: std::array::from_fn(|_| normal(rng)),
            },
            _ => Unary::BallIndicatorSmooth {
                radius: 0.5 + 2.5 * rng.random::<f64>(),
                width: 0.1 + rng.random::<f64>(),
            },
        })
        .collect();
    if rng.random::<bool>() {
        factors[0] = Unary::Constant { value: -1.0 };
    }
    TestFunction::Tensor(factors)
}

/// Heavy-tailed velocity proposal: a standard normal vector scaled by `1/U`.
pub fn heavy_tailed_velocity<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    std::array::from_fn(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) / u)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaNormReport {
    pub k: usize,
    pub alpha: f64,
    pub samples: usize,
    /// `(2 - alpha) k sup sigma_b`
    pub bound: f64,
    /// Largest `|Gamma Phi| / (bound ||Phi||_inf)` observed.
    pub max_ratio: f64,
}

/// Checks `|Gamma^alpha_{k;k+1} Phi| <= (2-alpha) k sup(sigma_b) ||Phi||_inf`
/// on random unit test functions and heavy-tailed velocities, allowing three
/// Monte Carlo standard errors.
pub fn gamma_norm_check(
    k: usize,
    alpha: f64,
    kernel: &CollisionKernel,
    sample_count: usize,
    omega_samples: usize,
    seed: u64,
) -> Result<GammaNormReport, LimitError> {
    let sup = kernel.sup_sigma().ok_or(LimitError::UnboundedKernel)?;
    if k == 0 {
        return Err(LimitError::InvalidArgument("k must be at least 1".into()));
    }
    let mut rng = stream(
        seed,
        Purpose::Harness(0x6761_6d6d),
        (k as u64) << 32 | (alpha * 1e6) as u64,
    );
    let bound = (2.0 - alpha) * k as f64 * sup;
    let mut max_ratio = 0.0f64;
    for sample in 0..sample_count {
        let phi = random_unit_test_function(k, &mut rng);
        let v: Vec<Vec3> = (0..=k).map(|_| heavy_tailed_velocity(&mut rng)).collect();
        let g = gamma_apply(&phi, &v, kernel, alpha, omega_samples, &mut rng);
        let scaled_bound = bound * phi.sup_norm().unwrap_or(f64::INFINITY);
        max_ratio = max_ratio.max(g.value.abs() / scaled_bound);
        if g.value.abs() > scaled_bound + 3.0 * g.stderr {
            return Err(LimitError::BoundViolated {
                k,
                alpha,
                sample,
                value: g.value,
                bound: scaled_bound,
                stderr: g.stderr,
            });
        }
    }
    Ok(GammaNormReport {
        k,
        alpha,
        samples: sample_count,
        bound,
        max_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contraction {
    /// `2 rho0 T (2 - alpha) sup sigma_b`
    pub factor: f64,
    /// Largest horizon with factor below one.
    pub t_max: f64,
}

pub fn uniqueness_contraction_factor(rho0: f64, t: f64, alpha: f64, sup_sigma: f64) -> Contraction {
    let rate = 2.0 * rho0 * (2.0 - alpha) * sup_sigma;
    Contraction {
        factor: rate * t,
        t_max: 1.0 / rate,
    }
}
