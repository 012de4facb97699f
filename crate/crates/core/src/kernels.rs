//! Collision kernels `B(u, omega)`, their collision frequencies and angular samplers.
//!
//! Every supported kernel shares the angular law `(1/2pi) |u_hat . omega|` and
//! differs only in the collision frequency `sigma_b(u)`, which depends on `|u|`:
//!
//! * Maxwell molecules: `sigma_b = 1`,
//! * hard spheres: `sigma_b = |u|`,
//! * bounded custom: piecewise-linear interpolation of a user table.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vec3::{self, Vec3};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("undefined angular density at zero relative velocity")]
    UndefinedDensity,
    #[error("invalid collision-frequency table: {0}")]
    InvalidTable(String),
    #[error("invalid kernel parameter `{key}`: {reason}")]
    InvalidParameter { key: &'static str, reason: String },
    #[error("failed to read collision-frequency table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Maxwell,
    HardSphere,
    BoundedCustom,
}

/// Piecewise-linear collision frequency as a function of relative speed.
///
/// The first node sits at speed 0 and the value is held constant past the
/// last node, so the interpolant is bounded by its largest node value.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaTable {
    speeds: Vec<f64>,
    sigmas: Vec<f64>,
}

impl SigmaTable {
    pub fn new(speeds: Vec<f64>, sigmas: Vec<f64>) -> Result<Self, KernelError> {
        let bad = |msg: &str| Err(KernelError::InvalidTable(msg.to_string()));
        if speeds.len() != sigmas.len() || speeds.is_empty() {
            return bad("speed and sigma columns must be non-empty and equally long");
        }
        if speeds[0] != 0.0 {
            return bad("first speed node must be 0");
        }
        if speeds.windows(2).any(|w| w[1] <= w[0] || !w[1].is_finite()) {
            return bad("speeds must be finite and strictly increasing");
        }
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("sigma values must be finite and non-negative");
        }
        Ok(SigmaTable { speeds, sigmas })
    }

    /// Reads a two-column CSV (`speed,sigma`), with or without a header row.
    pub fn from_csv(path: &Path) -> Result<Self, KernelError> {
        let io_err = |source| KernelError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(io_err)?;
        let (mut speeds, mut sigmas) = (Vec::new(), Vec::new());
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(io_err)?;
            let parse = |k: usize| record.get(k).and_then(|s| s.parse::<f64>().ok());
            match (parse(0), parse(1)) {
                (Some(u), Some(s)) => {
                    speeds.push(u);
                    sigmas.push(s);
                }
                _ if line == 0 => continue,
                _ => {
                    return Err(KernelError::InvalidTable(format!(
                        "row {} is not a pair of numbers",
                        line + 1
                    )))
                }
            }
        }
        SigmaTable::new(speeds, sigmas)
    }

    pub fn eval(&self, speed: f64) -> f64 {
        let k = self.speeds.partition_point(|&s| s <= speed);
        if k >= self.speeds.len() {
            return *self.sigmas.last().unwrap();
        }
        // k >= 1 because speeds[0] = 0 <= speed
        let (u0, u1) = (self.speeds[k - 1], self.speeds[k]);
        let (s0, s1) = (self.sigmas[k - 1], self.sigmas[k]);
        s0 + (s1 - s0) * (speed - u0) / (u1 - u0)
    }

    pub fn max(&self) -> f64 {
        self.sigmas.iter().copied().fold(0.0, f64::max)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.speeds.iter().copied().zip(self.sigmas.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomKernel {
    gamma: f64,
    c_b: f64,
    table: SigmaTable,
}

/// A collision kernel. Cheap to clone and safe to share between threads.
#[derive(Debug, Clone, PartialEq)]
pub enum CollisionKernel {
    Maxwell,
    HardSphere,
    BoundedCustom(Arc<CustomKernel>),
}

impl CollisionKernel {
    /// A bounded kernel with tabulated collision frequency.
    ///
    /// The table must satisfy `sigma(u) <= c_b * u^gamma` at every node; since
    /// `u^gamma` is concave for `gamma <= 1` and the table is held constant past
    /// its last node, the bound then holds for the whole interpolant.
    pub fn bounded_custom(gamma: f64, c_b: f64, table: SigmaTable) -> Result<Self, KernelError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(KernelError::InvalidParameter {
                key: "kernel.gamma",
                reason: format!("{gamma} is outside [0, 1]"),
            });
        }
        if !(c_b > 0.0 && c_b.is_finite()) {
            return Err(KernelError::InvalidParameter {
                key: "kernel.c_b",
                reason: format!("{c_b} is not a positive finite number"),
            });
        }
        for (u, s) in table.nodes() {
            let bound = c_b * u.powf(gamma);
            if s > bound * (1.0 + 1e-12) {
                return Err(KernelError::InvalidTable(format!(
                    "sigma({u}) = {s} exceeds the growth bound c_b*|u|^gamma = {bound}"
                )));
            }
        }
        Ok(CollisionKernel::BoundedCustom(Arc::new(CustomKernel {
            gamma,
            c_b,
            table,
        })))
    }

    pub fn family(&self) -> KernelFamily {
        match self {
            CollisionKernel::Maxwell => KernelFamily::Maxwell,
            CollisionKernel::HardSphere => KernelFamily::HardSphere,
            CollisionKernel::BoundedCustom(_) => KernelFamily::BoundedCustom,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            CollisionKernel::Maxwell => 0.0,
            CollisionKernel::HardSphere => 1.0,
            CollisionKernel::BoundedCustom(k) => k.gamma,
        }
    }

    pub fn c_b(&self) -> f64 {
        match self {
            CollisionKernel::Maxwell | CollisionKernel::HardSphere => 1.0,
            CollisionKernel::BoundedCustom(k) => k.c_b,
        }
    }

    /// `sup |sigma_b|`, present iff the collision frequency is bounded.
    pub fn sup_sigma(&self) -> Option<f64> {
        match self {
            CollisionKernel::Maxwell => Some(1.0),
            CollisionKernel::HardSphere => None,
            CollisionKernel::BoundedCustom(k) => Some(k.table.max()),
        }
    }

    /// True when the collision frequency does not depend on the relative velocity.
    pub fn is_constant_rate(&self) -> bool {
        matches!(self, CollisionKernel::Maxwell)
    }

    /// Collision frequency `sigma_b(u) = integral of B(u, omega) over the sphere`.
    #[inline]
    pub fn sigma_b(&self, u: Vec3) -> f64 {
        match self {
            CollisionKernel::Maxwell => 1.0,
            CollisionKernel::HardSphere => vec3::norm(u),
            CollisionKernel::BoundedCustom(k) => k.table.eval(vec3::norm(u)),
        }
    }

    /// The growth bound `c_b * |u|^gamma`.
    pub fn growth_bound(&self, u: Vec3) -> f64 {
        self.c_b() * vec3::norm(u).powf(self.gamma())
    }

    /// Kernel value `B(u, omega)`.
    pub fn density(&self, u: Vec3, omega: Vec3) -> Result<f64, KernelError> {
        let proj = vec3::dot(u, omega).abs() / (2.0 * PI);
        match self {
            CollisionKernel::HardSphere => Ok(proj),
            CollisionKernel::Maxwell | CollisionKernel::BoundedCustom(_) => {
                let speed = vec3::norm(u);
                if speed == 0.0 {
                    return if self.sigma_b(u) == 0.0 {
                        Ok(0.0)
                    } else {
                        Err(KernelError::UndefinedDensity)
                    };
                }
                Ok(self.sigma_b(u) * proj / speed)
            }
        }
    }

    /// Draws `omega` with density `B(u, omega) / sigma_b(u)` on the unit sphere.
    ///
    /// With `mu = u_hat . omega`, the law is uniform in azimuth and `|mu|`
    /// has density `2|mu|` on `[0, 1]`, i.e. `|mu| = sqrt(U)` with a fair sign.
    /// At `u = 0` the collision map is the identity, so a uniform direction is returned.
    pub fn sample_omega<R: Rng + ?Sized>(&self, u: Vec3, rng: &mut R) -> Vec3 {
        let speed = vec3::norm(u);
        if speed == 0.0 {
            return uniform_unit_vector(rng);
        }
        let axis = vec3::scale(u, 1.0 / speed);
        let (e1, e2) = vec3::orthonormal_complement(axis);
        let abs_mu = rng.random::<f64>().sqrt();
        let mu = if rng.random::<bool>() {
            abs_mu
        } else {
            -abs_mu
        };
        let phi = 2.0 * PI * rng.random::<f64>();
        let sin_theta = (1.0 - mu * mu).max(0.0).sqrt();
        let (s, c) = phi.sin_cos();
        [
            mu * axis[0] + sin_theta * (c * e1[0] + s * e2[0]),
            mu * axis[1] + sin_theta * (c * e1[1] + s * e2[1]),
            mu * axis[2] + sin_theta * (c * e1[2] + s * e2[2]),
        ]
    }
}

/// Uniform direction on the unit sphere.
pub fn uniform_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::stats::{chi_square, ks_one_sample};

    fn hs() -> CollisionKernel {
        CollisionKernel::HardSphere
    }

    #[test]
    fn sigma_b_examples() {
        assert_eq!(hs().sigma_b([3.0, 4.0, 0.0]), 5.0);
        assert_eq!(CollisionKernel::Maxwell.sigma_b([0.3, -2.0, 1.0]), 1.0);
        assert_eq!(hs().sigma_b([0.0; 3]), 0.0);
        assert_eq!(CollisionKernel::Maxwell.sigma_b([0.0; 3]), 1.0);
    }

    #[test]
    fn density_examples() {
        let d = hs().density([2.0, 0.0, 0.0], [1.0, 0.0, 0.0]).unwrap();
        assert!((d - 1.0 / PI).abs() < 1e-15);
        assert_eq!(hs().density([2.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap(), 0.0);
        let m = CollisionKernel::Maxwell
            .density([2.0, 0.0, 0.0], [1.0, 0.0, 0.0])
            .unwrap();
        assert!((m - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn maxwell_density_at_zero_is_an_error() {
        let err = CollisionKernel::Maxwell
            .density([0.0; 3], [1.0, 0.0, 0.0])
            .unwrap_err();
        assert_eq!(
            err.to_string(),
            "undefined angular density at zero relative velocity"
        );
    }

    #[test]
    fn kernel_constants() {
        assert_eq!(CollisionKernel::Maxwell.sup_sigma(), Some(1.0));
        assert_eq!(CollisionKernel::Maxwell.gamma(), 0.0);
        assert_eq!(hs().sup_sigma(), None);
        assert_eq!(hs().gamma(), 1.0);
        assert_eq!(hs().c_b(), 1.0);
    }

    #[test]
    fn density_integrates_to_sigma_b() {
        // Uniform-sphere Monte Carlo: 4 pi * E[B(u, omega)] over 1e6 directions.
        let mut rng = stream(11, Purpose::Harness(1), 0);
        let table = SigmaTable::new(vec![0.0, 1.0, 3.0], vec![0.0, 0.8, 1.5]).unwrap();
        let custom = CollisionKernel::bounded_custom(1.0, 1.0, table).unwrap();
        for kernel in [CollisionKernel::Maxwell, hs(), custom] {
            let u = [0.7, -1.3, 2.1];
            let n = 1_000_000;
            let acc: f64 = (0..n)
                .map(|_| kernel.density(u, uniform_unit_vector(&mut rng)).unwrap())
                .sum();
            let integral = 4.0 * PI * acc / n as f64;
            let exact = kernel.sigma_b(u);
            assert!(
                (integral - exact).abs() / exact < 1e-2,
                "{kernel:?}: {integral} vs {exact}"
            );
        }
    }

    #[test]
    fn sampled_mu_has_density_abs_mu() {
        let mut rng = stream(12, Purpose::Harness(2), 0);
        let u = [0.3, 0.4, -1.2];
        let uhat = vec3::scale(u, 1.0 / vec3::norm(u));
        let bins = 20usize;
        let mut counts = vec![0u64; bins];
        let n = 1_000_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let w = hs().sample_omega(u, &mut rng);
            assert!((vec3::norm(w) - 1.0).abs() < 1e-12);
            let mu = vec3::dot(uhat, w);
            m1 += mu;
            m2 += mu * mu;
            let b = (((mu + 1.0) / 2.0) * bins as f64)
                .floor()
                .min(bins as f64 - 1.0) as usize;
            counts[b] += 1;
        }
        // P(mu in [a, b]) = (sign(b) b^2 - sign(a) a^2) / 2 for density |mu|.
        let cdf = |x: f64| 0.5 + 0.5 * x * x.abs();
        let expected: Vec<f64> = (0..bins)
            .map(|k| {
                let a = -1.0 + 2.0 * k as f64 / bins as f64;
                let b = a + 2.0 / bins as f64;
                n as f64 * (cdf(b) - cdf(a))
            })
            .collect();
        let chi = chi_square(&counts, &expected);
        assert!(chi.p_value > 0.01, "chi-square p = {}", chi.p_value);
        assert!((m2 / n as f64 - 0.5).abs() < 3e-3);
        assert!((m1 / n as f64).abs() < 3e-3);
    }

    #[test]
    fn sampled_azimuth_is_uniform() {
        let mut rng = stream(13, Purpose::Harness(3), 0);
        let u = [1.0, 2.0, 2.0];
        let uhat = vec3::scale(u, 1.0 / 3.0);
        let (e1, e2) = vec3::orthonormal_complement(uhat);
        let phis: Vec<f64> = (0..100_000)
            .map(|_| {
                let w = CollisionKernel::Maxwell.sample_omega(u, &mut rng);
                vec3::dot(w, e2)
                    .atan2(vec3::dot(w, e1))
                    .rem_euclid(2.0 * PI)
            })
            .collect();
        let ks = ks_one_sample(&phis, |x| x / (2.0 * PI));
        assert!(ks.p_value > 0.01, "KS p = {}", ks.p_value);
    }

    #[test]
    fn zero_relative_velocity_gives_unit_vector() {
        let mut rng = stream(14, Purpose::Harness(4), 0);
        let w = hs().sample_omega([0.0; 3], &mut rng);
        assert!((vec3::norm(w) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn growth_bound_and_symmetry_hold() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = stream(15, Purpose::Harness(5), 0);
        let table = SigmaTable::new(vec![0.0, 0.5, 2.0], vec![0.0, 0.5, 1.2]).unwrap();
        let custom = CollisionKernel::bounded_custom(0.5, 1.0, table).unwrap();
        for kernel in [CollisionKernel::Maxwell, hs(), custom] {
            for _ in 0..100_000 {
                let scale = 1.0 / rng.random::<f64>();
                let u: Vec3 = std::array::from_fn(|_| {
                    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
                });
                let s = kernel.sigma_b(u);
                assert!(s <= kernel.growth_bound(u) * (1.0 + 1e-12));
                assert_eq!(s, kernel.sigma_b(vec3::scale(u, -1.0)));
            }
        }
    }

    #[test]
    fn table_interpolates_and_saturates() {
        let t = SigmaTable::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.5]).unwrap();
        assert_eq!(t.eval(0.0), 0.0);
        assert_eq!(t.eval(0.5), 0.5);
        assert_eq!(t.eval(1.5), 1.25);
        assert_eq!(t.eval(10.0), 1.5);
        assert_eq!(t.max(), 1.5);
    }

    #[test]
    fn table_violating_growth_is_rejected() {
        let t = SigmaTable::new(vec![0.0, 1.0], vec![0.5, 1.0]).unwrap();
        assert!(CollisionKernel::bounded_custom(1.0, 1.0, t).is_err());
        assert!(SigmaTable::new(vec![0.1, 1.0], vec![0.0, 1.0]).is_err());
        assert!(SigmaTable::new(vec![0.0, 1.0, 0.5], vec![0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn table_reads_csv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sigma.csv");
        std::fs::write(&path, "speed,sigma\n0,0\n1,0.9\n2,1.1\n").unwrap();
        let t = SigmaTable::from_csv(&path).unwrap();
        assert_eq!(t.eval(2.0), 1.1);
    }
}
