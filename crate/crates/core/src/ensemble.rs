//! Ensembles of independent realizations and the estimators built on them.
//!
//! Every realization starts from exactly `N0` i.i.d. velocities and is
//! simulated through a common snapshot grid. Estimators return one number per
//! realization and reduce them in realization-index order, so results do not
//! depend on the number of worker threads.

use std::borrow::Cow;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{simulate, DynamicsError, Mode, SystemState};
use crate::kernels::CollisionKernel;
use crate::limit_models::{gamma_apply, pair_operator_apply};
use crate::rng::{stream, Purpose, StreamRng};
use crate::stats::{mean_stderr, pairwise_sum, Estimate};
use crate::testfn::{TestFunction, Unary};
use crate::vec3::{self, Vec3};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("velocity sidecar: {0}")]
    Io(#[from] std::io::Error),
    #[error("velocity snapshots were not retained")]
    NotRetained,
    #[error("no snapshot at t = {0}")]
    NoSnapshot(f64),
    #[error("correlations of order {0} are not supported (1 <= l <= 3)")]
    UnsupportedOrder(usize),
    #[error("invalid test function: {0}")]
    TestFunction(String),
}

/// Law `f0` of the initial velocities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    /// Centered Gaussian with covariance `t0 I`.
    Maxwellian { t0: f64 },
    /// Maxwellian of temperature `t0` shifted by `+offset` or `-offset` along x with equal odds.
    Bimodal { offset: f64, t0: f64 },
    /// Uniform on the ball of radius `r`.
    Ball { r: f64 },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            InitialLaw::Maxwellian { t0 } if !(t0 > 0.0 && t0.is_finite()) => {
                Err(format!("t0 = {t0} must be positive"))
            }
            InitialLaw::Bimodal { offset, t0 }
                if !(t0 > 0.0 && t0.is_finite() && offset.is_finite()) =>
            {
                Err(format!(
                    "bimodal needs t0 > 0 and finite offset (got t0 = {t0}, offset = {offset})"
                ))
            }
            InitialLaw::Ball { r } if !(r > 0.0 && r.is_finite()) => {
                Err(format!("ball radius {r} must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// `E0 = integral of |v|^2 f0`.
    pub fn energy(&self) -> f64 {
        match *self {
            InitialLaw::Maxwellian { t0 } => 3.0 * t0,
            InitialLaw::Bimodal { offset, t0 } => offset * offset + 3.0 * t0,
            InitialLaw::Ball { r } => 0.6 * r * r,
        }
    }

    /// Mean velocity of `f0`.
    pub fn mean(&self) -> Vec3 {
        vec3::ZERO
    }

    /// `3 T0 = integral of |v - u0|^2 f0`, divided by 3.
    pub fn temperature(&self) -> f64 {
        self.energy() / 3.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        let gauss = |rng: &mut R| -> Vec3 {
            std::array::from_fn(|_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            })
        };
        match *self {
            InitialLaw::Maxwellian { t0 } => vec3::scale(gauss(rng), t0.sqrt()),
            InitialLaw::Bimodal { offset, t0 } => {
                let shift = if rng.random::<bool>() {
                    offset
                } else {
                    -offset
                };
                vec3::add(vec3::scale(gauss(rng), t0.sqrt()), [shift, 0.0, 0.0])
            }
            InitialLaw::Ball { r } => loop {
                let v: Vec3 = std::array::from_fn(|_| 2.0 * rng.random::<f64>() - 1.0);
                if vec3::norm_sq(v) <= 1.0 {
                    break vec3::scale(v, r);
                }
            },
        }
    }
}

/// Default bound on retained velocity components before spilling to disk.
pub const DEFAULT_MEMORY_CAP: usize = 48_000_000;

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub kernel: CollisionKernel,
    pub alpha: f64,
    pub n0: usize,
    pub lambda: f64,
    pub init: InitialLaw,
    pub mode: Mode,
    pub snapshot_times: Vec<f64>,
    pub realizations: usize,
    pub seed: u64,
    pub retain_velocities: bool,
    /// Largest number of `f64` velocity components kept in memory.
    pub memory_cap: usize,
    /// Directory for the velocity sidecar; a temporary file is used when absent.
    pub sidecar_dir: Option<PathBuf>,
}

impl EnsembleSpec {
    pub fn new(
        kernel: CollisionKernel,
        alpha: f64,
        n0: usize,
        init: InitialLaw,
        snapshot_times: Vec<f64>,
    ) -> Self {
        EnsembleSpec {
            kernel,
            alpha,
            n0,
            lambda: n0 as f64,
            init,
            mode: Mode::Exact,
            snapshot_times,
            realizations: 1,
            seed: 0,
            retain_velocities: true,
            memory_cap: DEFAULT_MEMORY_CAP,
            sidecar_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        let fail = |m: String| Err(EnsembleError::Config(m));
        if self.n0 == 0 || self.n0 % 2 == 1 {
            return fail(format!("N0 = {} must be even and positive", self.n0));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda = {} must be positive", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha = {} outside [0, 1]", self.alpha));
        }
        if self.realizations == 0 {
            return fail("ensemble size must be positive".into());
        }
        if self.snapshot_times.is_empty()
            || self
                .snapshot_times
                .iter()
                .any(|t| !(*t >= 0.0 && t.is_finite()))
            || self.snapshot_times.windows(2).any(|w| w[1] <= w[0])
        {
            return fail(
                "snapshot times must be finite, non-negative and strictly increasing".into(),
            );
        }
        self.init.validate().map_err(EnsembleError::Config)
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.lambda
    }
}

/// Scalar observables of one realization at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarRecord {
    pub n: usize,
    /// `sum_i |v_i|^2`
    pub energy: f64,
    pub momentum: Vec3,
}

#[derive(Debug)]
enum VelocityStore {
    None,
    Memory(Vec<Vec<Vec<Vec3>>>),
    Sidecar {
        file: Mutex<File>,
        offsets: Vec<u64>,
        path: PathBuf,
        _temp: Option<tempfile::TempPath>,
    },
}

#[derive(Debug)]
pub struct Ensemble {
    spec: EnsembleSpec,
    scalars: Vec<Vec<ScalarRecord>>,
    store: VelocityStore,
    pub events: u64,
    pub nulls: u64,
}

struct Realization {
    scalars: Vec<ScalarRecord>,
    velocities: Option<Vec<Vec<Vec3>>>,
    events: u64,
    nulls: u64,
}

fn run_one(spec: &EnsembleSpec, r: usize) -> Result<Realization, EnsembleError> {
    let mut rng = stream(spec.seed, Purpose::Dynamics, r as u64);
    let velocities: Vec<Vec3> = (0..spec.n0).map(|_| spec.init.sample(&mut rng)).collect();
    let mut state = SystemState::new(velocities, spec.lambda, spec.alpha, spec.kernel.clone())?;
    let traj = simulate(
        &mut state,
        &spec.snapshot_times,
        spec.mode,
        spec.retain_velocities,
        &mut rng,
    )?;
    let scalars = traj
        .snapshots
        .iter()
        .map(|s| ScalarRecord {
            n: s.n,
            energy: s.energy,
            momentum: s.momentum,
        })
        .collect();
    let velocities = spec.retain_velocities.then(|| {
        traj.snapshots
            .into_iter()
            .map(|s| s.velocities.unwrap_or_default())
            .collect()
    });
    Ok(Realization {
        scalars,
        velocities,
        events: traj.events,
        nulls: traj.nulls,
    })
}

/// Simulates `spec.realizations` independent realizations.
///
/// Realization `r` draws its initial velocities and its jump times from the
/// stream `(seed, Dynamics, r)`.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<Ensemble, EnsembleError> {
    spec.validate()?;
    let m = spec.realizations;
    let s = spec.snapshot_times.len();
    let per_realization = s * spec.n0 * 3;
    let spill = spec.retain_velocities && per_realization.saturating_mul(m) > spec.memory_cap;
    let mut scalars = Vec::with_capacity(m);
    let (mut events, mut nulls) = (0, 0);
    if !spill {
        let runs: Vec<Realization> = (0..m)
            .into_par_iter()
            .map(|r| run_one(spec, r))
            .collect::<Result<_, _>>()?;
        let mut mem = Vec::with_capacity(if spec.retain_velocities { m } else { 0 });
        for run in runs {
            scalars.push(run.scalars);
            events += run.events;
            nulls += run.nulls;
            if let Some(v) = run.velocities {
                mem.push(v);
            }
        }
        let store = if spec.retain_velocities {
            VelocityStore::Memory(mem)
        } else {
            VelocityStore::None
        };
        return Ok(Ensemble {
            spec: spec.clone(),
            scalars,
            store,
            events,
            nulls,
        });
    }

    let (file, path, temp) = match &spec.sidecar_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("velocities.bin");
            let file = File::options()
                .read(true)
                .write(true)
                .create(true)
                .truncate(true)
                .open(&path)?;
            (file, path, None)
        }
        None => {
            let tmp = tempfile::NamedTempFile::new()?;
            let (file, temp_path) = tmp.into_parts();
            (file, temp_path.to_path_buf(), Some(temp_path))
        }
    };
    let mut writer = BufWriter::new(file);
    let mut offsets = Vec::with_capacity(m * s);
    let mut offset = 0u64;
    let chunk = (spec.memory_cap / per_realization.max(1)).clamp(1, m);
    for start in (0..m).step_by(chunk) {
        let end = (start + chunk).min(m);
        let runs: Vec<Realization> = (start..end)
            .into_par_iter()
            .map(|r| run_one(spec, r))
            .collect::<Result<_, _>>()?;
        for run in runs {
            for (k, v) in run.velocities.expect("retained").iter().enumerate() {
                offsets.push(offset);
                writer.write_all(&(k as u64).to_le_bytes())?;
                writer.write_all(&(v.len() as u64).to_le_bytes())?;
                for x in v.iter().flatten() {
                    writer.write_all(&x.to_le_bytes())?;
                }
                offset += 16 + 24 * v.len() as u64;
            }
            scalars.push(run.scalars);
            events += run.events;
            nulls += run.nulls;
        }
    }
    let file = writer.into_inner().map_err(|e| e.into_error())?;
    file.sync_all()?;
    let store = VelocityStore::Sidecar {
        file: Mutex::new(file),
        offsets,
        path,
        _temp: temp,
    };
    Ok(Ensemble {
        spec: spec.clone(),
        scalars,
        store,
        events,
        nulls,
    })
}

impl Ensemble {
    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn realizations(&self) -> usize {
        self.scalars.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.spec.snapshot_times
    }

    pub fn epsilon(&self) -> f64 {
        self.spec.epsilon()
    }

    /// Index of the snapshot taken at `t`.
    pub fn snapshot_index(&self, t: f64) -> Result<usize, EnsembleError> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times()
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .ok_or(EnsembleError::NoSnapshot(t))
    }

    pub fn scalar(&self, r: usize, s: usize) -> &ScalarRecord {
        &self.scalars[r][s]
    }

    /// Path of the on-disk velocity sidecar, when velocities were spilled.
    pub fn sidecar_path(&self) -> Option<&std::path::Path> {
        match &self.store {
            VelocityStore::Sidecar { path, .. } => Some(path),
            _ => None,
        }
    }

    /// Velocities of realization `r` at snapshot `s`.
    pub fn velocities(&self, r: usize, s: usize) -> Result<Cow<'_, [Vec3]>, EnsembleError> {
        match &self.store {
            VelocityStore::None => Err(EnsembleError::NotRetained),
            VelocityStore::Memory(v) => Ok(Cow::Borrowed(&v[r][s])),
            VelocityStore::Sidecar { file, offsets, .. } => {
                let n = self.scalars[r][s].n;
                let mut buf = vec![0u8; 16 + 24 * n];
                {
                    let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
                    f.seek(SeekFrom::Start(offsets[r * self.times().len() + s]))?;
                    f.read_exact(&mut buf)?;
                }
                let word = |k: usize| u64::from_le_bytes(buf[8 * k..8 * k + 8].try_into().unwrap());
                if word(0) != s as u64 || word(1) != n as u64 {
                    return Err(EnsembleError::Io(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("sidecar record ({r}, {s}) is corrupt"),
                    )));
                }
                let f =
                    |k: usize| f64::from_le_bytes(buf[16 + 8 * k..24 + 8 * k].try_into().unwrap());
                Ok(Cow::Owned(
                    (0..n)
                        .map(|i| [f(3 * i), f(3 * i + 1), f(3 * i + 2)])
                        .collect(),
                ))
            }
        }
    }

    /// Applies `f` to every realization at snapshot `s`, in parallel, returning values in index order.
    pub fn map_realizations<T, F>(&self, s: usize, f: F) -> Result<Vec<T>, EnsembleError>
    where
        T: Send,
        F: Fn(usize, &[Vec3]) -> T + Sync,
    {
        (0..self.realizations())
            .into_par_iter()
            .map(|r| self.velocities(r, s).map(|v| f(r, &v)))
            .collect()
    }

    /// Mean and standard error of a per-realization scalar at snapshot `s`.
    pub fn scalar_estimate<F: Fn(&ScalarRecord) -> f64>(&self, s: usize, f: F) -> Estimate {
        let xs: Vec<f64> = self.scalars.iter().map(|row| f(&row[s])).collect();
        mean_stderr(&xs)
    }
}

/// `n (n-1) ... (n-k+1)` as a float.
pub fn falling(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).map(|i| (n - i) as f64).product()
}

/// Order-independent sum: values are sorted before the pairwise reduction.
fn sym_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    pairwise_sum(&xs)
}

fn tensor_tuple_sum(factors: &[Unary], v: &[Vec3]) -> f64 {
    let cols: Vec<Vec<f64>> = factors
        .iter()
        .map(|f| v.iter().map(|&x| f.eval(x)).collect())
        .collect();
    let s = |idx: &[usize]| {
        sym_sum(
            (0..v.len())
                .map(|i| idx.iter().map(|&c| cols[c][i]).product())
                .collect(),
        )
    };
    match factors.len() {
        1 => s(&[0]),
        2 => s(&[0]) * s(&[1]) - s(&[0, 1]),
        3 => {
            s(&[0]) * s(&[1]) * s(&[2])
                - s(&[0, 1]) * s(&[2])
                - s(&[0, 2]) * s(&[1])
                - s(&[1, 2]) * s(&[0])
                + 2.0 * s(&[0, 1, 2])
        }
        _ => unreachable!("order checked by caller"),
    }
}

fn capped_energy_tuple_sum(ell: usize, cap: f64, v: &[Vec3]) -> f64 {
    let e: Vec<f64> = v.iter().map(|&x| vec3::norm_sq(x)).collect();
    let max = e.iter().copied().fold(0.0, f64::max);
    if cap >= max {
        return falling(v.len() - 1, ell - 1) * sym_sum(e);
    }
    let n = v.len();
    let mut terms = Vec::new();
    let perms = falling(ell, ell);
    match ell {
        1 => terms.extend(e.iter().map(|&x| x.min(cap))),
        2 => {
            for i in 0..n {
                for j in (i + 1)..n {
                    terms.push(((e[i] + e[j]) / 2.0).min(cap));
                }
            }
        }
        _ => {
            for i in 0..n {
                for j in (i + 1)..n {
                    for k in (j + 1)..n {
                        terms.push(((e[i] + e[j] + e[k]) / 3.0).min(cap));
                    }
                }
            }
        }
    }
    perms * sym_sum(terms)
}

/// `sum over ordered distinct l-tuples of Phi(v_{i_1}, ..., v_{i_l})` for one configuration.
pub fn tuple_sum(phi: &TestFunction, v: &[Vec3]) -> Result<f64, EnsembleError> {
    let ell = phi.arity();
    if !(1..=3).contains(&ell) {
        return Err(EnsembleError::UnsupportedOrder(ell));
    }
    if v.len() < ell {
        return Ok(0.0);
    }
    Ok(match phi {
        TestFunction::Tensor(factors) => tensor_tuple_sum(factors, v),
        TestFunction::CappedMeanEnergy { cap, .. } => capped_energy_tuple_sum(ell, *cap, v),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalCorrelation {
    pub ell: usize,
    pub t: f64,
    pub value: f64,
    /// Absent for a single realization.
    pub stderr: Option<f64>,
    pub m: usize,
}

fn check_phi(phi: &TestFunction) -> Result<(), EnsembleError> {
    phi.validate()
        .map_err(|e| EnsembleError::TestFunction(e.0))?;
    if !(1..=3).contains(&phi.arity()) {
        return Err(EnsembleError::UnsupportedOrder(phi.arity()));
    }
    Ok(())
}

/// Per-realization values `eps^l * tuple_sum(Phi, V(t_s))`.
pub fn correlation_samples(
    ens: &Ensemble,
    phi: &TestFunction,
    s: usize,
) -> Result<Vec<f64>, EnsembleError> {
    check_phi(phi)?;
    let scale = ens.epsilon().powi(phi.arity() as i32);
    if let Some(c) = phi.constant_value() {
        let ell = phi.arity();
        return Ok((0..ens.realizations())
            .map(|r| scale * c * falling(ens.scalar(r, s).n, ell))
            .collect());
    }
    ens.map_realizations(s, |_, v| tuple_sum(phi, v).map(|x| scale * x))?
        .into_iter()
        .collect()
}

/// Factorial-moment estimate of `<f_l^eps(t), Phi>` at snapshot `s`.
pub fn estimate_correlation(
    ens: &Ensemble,
    phi: &TestFunction,
    s: usize,
) -> Result<EmpiricalCorrelation, EnsembleError> {
    let xs = correlation_samples(ens, phi, s)?;
    let e = mean_stderr(&xs);
    Ok(EmpiricalCorrelation {
        ell: phi.arity(),
        t: ens.times()[s],
        value: e.value,
        stderr: e.stderr,
        m: xs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaosDefect {
    /// `<f_2, phi (x) psi> - <f_1, phi> <f_1, psi>`
    pub signed: f64,
    pub value: f64,
    pub stderr: Option<f64>,
}

/// `|<f_2^eps, phi (x) psi> - <f_1^eps, phi> <f_1^eps, psi>|` at snapshot `s`,
/// with a delta-method standard error.
pub fn chaos_defect(
    ens: &Ensemble,
    phi: &Unary,
    psi: &Unary,
    s: usize,
) -> Result<ChaosDefect, EnsembleError> {
    let eps = ens.epsilon();
    let rows: Vec<[f64; 3]> = ens.map_realizations(s, |_, v| {
        let a: Vec<f64> = v.iter().map(|&x| phi.eval(x)).collect();
        let b: Vec<f64> = v.iter().map(|&x| psi.eval(x)).collect();
        let sa = sym_sum(a.clone());
        let sb = sym_sum(b.clone());
        let sab = sym_sum(a.iter().zip(&b).map(|(x, y)| x * y).collect());
        [eps * eps * (sa * sb - sab), eps * sa, eps * sb]
    })?;
    let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
    let (x, y, z) = (
        mean_stderr(&col(0)),
        mean_stderr(&col(1)),
        mean_stderr(&col(2)),
    );
    let signed = x.value - y.value * z.value;
    let influence: Vec<f64> = rows
        .iter()
        .map(|r| r[0] - z.value * r[1] - y.value * r[2])
        .collect();
    let stderr = mean_stderr(&influence).stderr;
    Ok(ChaosDefect {
        signed,
        value: signed.abs(),
        stderr,
    })
}

/// Ordered distinct `k`-tuples of `0..n` in lexicographic order.
fn for_each_tuple<F: FnMut(&[usize])>(n: usize, k: usize, f: &mut F) {
    fn rec<F: FnMut(&[usize])>(n: usize, k: usize, cur: &mut Vec<usize>, f: &mut F) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in 0..n {
            if !cur.contains(&i) {
                cur.push(i);
                rec(n, k, cur, f);
                cur.pop();
            }
        }
    }
    rec(n, k, &mut Vec::with_capacity(k), f);
}

fn random_tuple<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    while out.len() < k {
        let i = rng.random_range(0..n);
        if !out.contains(&i) {
            out.push(i);
        }
    }
}

/// `sum over ordered distinct k-tuples of term(tuple)`, enumerated when there are
/// at most `cap` tuples and otherwise estimated from `cap` uniform draws.
fn tuple_operator_sum<F>(n: usize, k: usize, cap: usize, rng: &mut StreamRng, mut term: F) -> f64
where
    F: FnMut(&[usize], &mut StreamRng) -> f64,
{
    let count = falling(n, k);
    if count == 0.0 {
        return 0.0;
    }
    let mut terms = Vec::new();
    if count <= cap as f64 {
        let mut tuples = Vec::new();
        for_each_tuple(n, k, &mut |t: &[usize]| tuples.push(t.to_vec()));
        for t in &tuples {
            terms.push(term(t, rng));
        }
        return pairwise_sum(&terms);
    }
    let mut t = Vec::with_capacity(k);
    for _ in 0..cap.max(1) {
        random_tuple(n, k, rng, &mut t);
        terms.push(term(&t, rng));
    }
    count * pairwise_sum(&terms) / terms.len() as f64
}

/// Monte Carlo settings of the hierarchy residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSettings {
    /// Angular draws per collision term.
    pub omega_draws: usize,
    /// Tuples per snapshot beyond which tuple sums are subsampled.
    pub pair_samples: usize,
    /// Grid spacing above which a warning is recorded.
    pub max_spacing: f64,
    /// Salt for the quadrature streams.
    pub salt: u64,
}

impl Default for ResidualSettings {
    fn default() -> Self {
        ResidualSettings {
            omega_draws: 64,
            pair_samples: 128,
            max_spacing: 1.0 / 32.0,
            salt: 0,
        }
    }
}

/// Hierarchy residual at every snapshot up to `t_{s_end}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSeries {
    pub ell: usize,
    pub t: Vec<f64>,
    pub residual: Vec<f64>,
    /// Statistical and quadrature errors combined in quadrature.
    pub stderr: Vec<f64>,
    pub statistical: Vec<f64>,
    pub quadrature: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ResidualSeries {
    pub fn at(&self, s: usize) -> (f64, f64) {
        (self.residual[s], self.stderr[s])
    }
}

/// The integrand `eps <f_l, L Phi> + <f_{l+1}, Gamma Phi>` of the weak hierarchy for one configuration.
fn hierarchy_rate(
    phi: &TestFunction,
    v: &[Vec3],
    kernel: &CollisionKernel,
    alpha: f64,
    eps: f64,
    settings: &ResidualSettings,
    rng: &mut StreamRng,
) -> f64 {
    let ell = phi.arity();
    let n = v.len();
    let pair_count = (ell * ell.saturating_sub(1) / 2) as f64;
    if let (Some(c), true) = (phi.constant_value(), kernel.is_constant_rate()) {
        let sigma = kernel.sigma_b([1.0, 0.0, 0.0]);
        let inner = -alpha * c * sigma * pair_count * falling(n, ell);
        let outer = -alpha * c * sigma * ell as f64 * falling(n, ell + 1);
        return eps * eps.powi(ell as i32) * inner + eps.powi(ell as i32 + 1) * outer;
    }
    let mut buf: Vec<Vec3> = Vec::with_capacity(ell + 1);
    let inner = if ell >= 2 {
        tuple_operator_sum(n, ell, settings.pair_samples, rng, |t, rng| {
            buf.clear();
            buf.extend(t.iter().map(|&i| v[i]));
            pair_operator_apply(phi, &buf, kernel, alpha, settings.omega_draws, rng).value
        })
    } else {
        0.0
    };
    let outer = tuple_operator_sum(n, ell + 1, settings.pair_samples, rng, |t, rng| {
        buf.clear();
        buf.extend(t.iter().map(|&i| v[i]));
        gamma_apply(phi, &buf, kernel, alpha, settings.omega_draws, rng).value
    });
    eps * eps.powi(ell as i32) * inner + eps.powi(ell as i32 + 1) * outer
}

fn cumulative_trapezoid(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..y.len() {
        acc += 0.5 * (t[k] - t[k - 1]) * (y[k] + y[k - 1]);
        out.push(acc);
    }
    out
}

/// Residual of the weak rescaled hierarchy
/// `<f_l(t), Phi> - <f_l(0), Phi> - int_0^t (eps <f_l, L Phi> + <f_{l+1}, Gamma Phi>) ds`
/// at each snapshot up to `s_end`.
///
/// Collision terms use [`gamma_apply`] and its in-tuple analogue; tuple sums
/// are subsampled above `settings.pair_samples` tuples. Time integrals use the
/// trapezoid rule, and the quadrature error is estimated from the ensemble-mean
/// integrand by comparing step `h` against step `2h`.
pub fn bbgky_residual(
    ens: &Ensemble,
    phi: &TestFunction,
    s_end: usize,
    settings: &ResidualSettings,
) -> Result<ResidualSeries, EnsembleError> {
    check_phi(phi)?;
    if ens.times()[0] != 0.0 {
        return Err(EnsembleError::Config(
            "the residual needs a snapshot at t = 0".into(),
        ));
    }
    let ell = phi.arity();
    let times = &ens.times()[..=s_end];
    let spec = ens.spec();
    let eps = ens.epsilon();
    let scale = eps.powi(ell as i32);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..ens.realizations())
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, Vec<f64>), EnsembleError> {
            let mut rng = stream(spec.seed, Purpose::Quadrature(settings.salt), r as u64);
            let mut a = Vec::with_capacity(times.len());
            let mut rate = Vec::with_capacity(times.len());
            for s in 0..times.len() {
                let v = ens.velocities(r, s)?;
                a.push(scale * tuple_sum(phi, &v)?);
                rate.push(hierarchy_rate(
                    phi,
                    &v,
                    &spec.kernel,
                    spec.alpha,
                    eps,
                    settings,
                    &mut rng,
                ));
            }
            let integral = cumulative_trapezoid(times, &rate);
            let residual = (0..times.len())
                .map(|s| a[s] - a[0] - integral[s])
                .collect();
            Ok((residual, rate))
        })
        .collect::<Result<_, _>>()?;
    let mean_rate: Vec<f64> = (0..times.len())
        .map(|s| mean_stderr(&rows.iter().map(|r| r.1[s]).collect::<Vec<_>>()).value)
        .collect();
    let mut out = ResidualSeries {
        ell,
        t: times.to_vec(),
        residual: Vec::new(),
        stderr: Vec::new(),
        statistical: Vec::new(),
        quadrature: Vec::new(),
        warnings: Vec::new(),
    };
    let max_dt = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if max_dt > settings.max_spacing * (1.0 + 1e-9) {
        out.warnings.push(format!(
            "snapshot spacing {max_dt} exceeds {} for the hierarchy residual time quadrature",
            settings.max_spacing
        ));
    }
    for s in 0..times.len() {
        let est = mean_stderr(&rows.iter().map(|r| r.0[s]).collect::<Vec<_>>());
        let stat = est.stderr.unwrap_or(0.0);
        let quad = richardson_error(&times[..=s], &mean_rate[..=s]);
        out.residual.push(est.value);
        out.statistical.push(stat);
        out.quadrature.push(quad);
        out.stderr.push(if est.stderr.is_some() {
            stat.hypot(quad)
        } else {
            f64::NAN
        });
    }
    Ok(out)
}

/// `|T_h - T_2h| / 3` over the longest even-length prefix of the grid.
fn richardson_error(t: &[f64], y: &[f64]) -> f64 {
    let m = (t.len() - 1) & !1;
    if m < 2 {
        return 0.0;
    }
    let fine = *cumulative_trapezoid(&t[..=m], &y[..=m]).last().unwrap();
    let tc: Vec<f64> = t[..=m].iter().step_by(2).copied().collect();
    let yc: Vec<f64> = y[..=m].iter().step_by(2).copied().collect();
    let coarse = *cumulative_trapezoid(&tc, &yc).last().unwrap();
    (fine - coarse).abs() / 3.0
}

/// `E_l(t) = <f_l, l^-1 sum_j |v_j|^2>` and `rho_l(t) = <f_l, 1>` at snapshot `s`.
pub fn energy_and_mass(ens: &Ensemble, ell: usize, s: usize) -> (Estimate, Estimate) {
    let scale = ens.epsilon().powi(ell as i32);
    let e = ens.scalar_estimate(s, |rec| {
        scale * falling(rec.n.saturating_sub(1), ell - 1) * rec.energy
    });
    let rho = ens.scalar_estimate(s, |rec| scale * falling(rec.n, ell));
    (e, rho)
}
