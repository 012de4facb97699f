//! The stochastic N-particle jump process with elastic collisions and pairwise annihilation.
//!
//! Each unordered pair `{i, j}` fires at rate `sigma_b(v_i - v_j) / lambda`.
//! A firing pair annihilates with probability `alpha` and otherwise scatters
//! elastically with `omega` drawn from the kernel's angular law.
//!
//! Two schedulers are provided:
//!
//! * [`Mode::Exact`]: direct Gillespie scheduling. For velocity-dependent
//!   kernels it keeps per-particle row sums `sum_k sigma_b(v_i - v_k)` in a
//!   Fenwick tree, updated in O(N) per event, with O(log N + N) pair selection.
//! * [`Mode::Majorant`]: null-collision thinning against the constant per-pair
//!   bound `c_b * (2 * max_speed)^gamma`, with O(1) uniform pair proposals.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::CollisionKernel;
use crate::vec3::{self, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("absorbing configuration: {n} particle(s) left")]
    Absorbing { n: usize },
    #[error("all pair rates vanish; the configuration is frozen")]
    Frozen,
    #[error("majorant violation at t = {time}: acceptance ratio {ratio} > 1 for pair ({i}, {j})")]
    MajorantViolation {
        time: f64,
        ratio: f64,
        i: usize,
        j: usize,
    },
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("snapshot times must be nondecreasing and start at or after the current time")]
    InvalidSchedule,
}

/// Scheduling algorithm for the jump process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Exact,
    Majorant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Elastic {
        i: usize,
        j: usize,
        omega: Vec3,
    },
    Annihilation {
        i: usize,
        j: usize,
    },
    /// A rejected majorant proposal; only the clock moved.
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// Post-collision velocities for scattering vector `omega`.
#[inline]
pub fn elastic_collide(vi: Vec3, vj: Vec3, omega: Vec3) -> (Vec3, Vec3) {
    let c = vec3::dot(vec3::sub(vi, vj), omega);
    let shift = vec3::scale(omega, c);
    (vec3::sub(vi, shift), vec3::add(vj, shift))
}

/// Fenwick tree over non-negative weights with prefix search.
#[derive(Debug, Clone, Default)]
struct SumTree {
    tree: Vec<f64>,
}

impl SumTree {
    fn rebuild(&mut self, weights: &[f64]) {
        let n = weights.len();
        self.tree.clear();
        self.tree.push(0.0);
        self.tree.extend_from_slice(weights);
        for i in 1..=n {
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[i];
            }
        }
    }

    fn total(&self) -> f64 {
        let mut i = self.tree.len() - 1;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i &= i - 1;
        }
        s
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0usize;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

#[derive(Debug, Clone)]
struct RowRates {
    rows: Vec<f64>,
    tree: SumTree,
}

/// The configuration `V_N` together with the process clock and rate bookkeeping.
#[derive(Debug, Clone)]
pub struct SystemState {
    velocities: Vec<Vec3>,
    lambda: f64,
    alpha: f64,
    time: f64,
    kernel: CollisionKernel,
    rates: Option<RowRates>,
    max_speed: f64,
    initial_parity: usize,
}

impl SystemState {
    pub fn new(
        velocities: Vec<Vec3>,
        lambda: f64,
        alpha: f64,
        kernel: CollisionKernel,
    ) -> Result<Self, DynamicsError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(DynamicsError::InvalidState(format!(
                "volume {lambda} must be positive"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(DynamicsError::InvalidState(format!(
                "alpha {alpha} outside [0, 1]"
            )));
        }
        if velocities.iter().flatten().any(|x| !x.is_finite()) {
            return Err(DynamicsError::InvalidState("non-finite velocity".into()));
        }
        let max_speed = velocities
            .iter()
            .map(|&v| vec3::norm(v))
            .fold(0.0, f64::max);
        let initial_parity = velocities.len() % 2;
        Ok(SystemState {
            velocities,
            lambda,
            alpha,
            time: 0.0,
            kernel,
            rates: None,
            max_speed,
            initial_parity,
        })
    }

    pub fn n(&self) -> usize {
        self.velocities.len()
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        1.0 / self.lambda
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kernel(&self) -> &CollisionKernel {
        &self.kernel
    }

    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    /// Parity of the initial particle count; annihilation preserves it.
    pub fn parity(&self) -> usize {
        self.initial_parity
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.velocities.iter().map(|&v| vec3::norm_sq(v)).sum()
    }

    pub fn momentum(&self) -> Vec3 {
        self.velocities
            .iter()
            .fold(vec3::ZERO, |acc, &v| vec3::add(acc, v))
    }

    /// `sigma_N(V_N) = sum_{i<j} sigma_b(v_i - v_j)` by direct O(N^2) summation.
    pub fn pair_rate_sum_direct(&self) -> f64 {
        let n = self.n();
        if self.kernel.is_constant_rate() {
            return (n * n.saturating_sub(1)) as f64 / 2.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += self
                    .kernel
                    .sigma_b(vec3::sub(self.velocities[i], self.velocities[j]));
            }
        }
        s
    }

    fn pair_rate_sum(&self) -> f64 {
        let n = self.n();
        if self.kernel.is_constant_rate() {
            (n * n.saturating_sub(1)) as f64 / 2.0
        } else if let Some(rates) = &self.rates {
            0.5 * rates.tree.total()
        } else {
            self.pair_rate_sum_direct()
        }
    }

    /// Total jump rate `sigma_N(V_N) / lambda`; zero in the absorbing states N < 2.
    pub fn total_rate(&self) -> f64 {
        if self.n() < 2 {
            return 0.0;
        }
        self.pair_rate_sum() / self.lambda
    }

    /// Relative difference between the incremental rate cache and a full
    /// recomputation, or `None` when no cache is maintained.
    pub fn rate_cache_error(&self) -> Option<f64> {
        let rates = self.rates.as_ref()?;
        let cached = 0.5 * rates.tree.total();
        let direct = self.pair_rate_sum_direct();
        let row_err = (0..self.n())
            .map(|i| {
                let fresh: f64 = (0..self.n())
                    .filter(|&k| k != i)
                    .map(|k| {
                        self.kernel
                            .sigma_b(vec3::sub(self.velocities[i], self.velocities[k]))
                    })
                    .sum();
                (rates.rows[i] - fresh).abs()
            })
            .fold(0.0, f64::max);
        let scale = direct.max(f64::MIN_POSITIVE);
        Some(((cached - direct).abs() / scale).max(row_err / scale))
    }

    #[doc(hidden)]
    /// Overrides the speed majorant. Only for fault-injection tests.
    pub fn override_max_speed(&mut self, s: f64) {
        self.max_speed = s;
    }

    fn ensure_rate_cache(&mut self) {
        if self.kernel.is_constant_rate() || self.rates.is_some() {
            return;
        }
        let n = self.n();
        let mut rows = vec![0.0; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let s = self
                    .kernel
                    .sigma_b(vec3::sub(self.velocities[i], self.velocities[j]));
                rows[i] += s;
                rows[j] += s;
            }
        }
        let mut tree = SumTree::default();
        tree.rebuild(&rows);
        self.rates = Some(RowRates { rows, tree });
    }

    fn apply_elastic(&mut self, i: usize, j: usize, omega: Vec3) {
        let (vi, vj) = (self.velocities[i], self.velocities[j]);
        let (wi, wj) = elastic_collide(vi, vj, omega);
        if let Some(rates) = self.rates.as_mut() {
            let kernel = &self.kernel;
            let (mut row_i, mut row_j) = (0.0, 0.0);
            for (k, &vk) in self.velocities.iter().enumerate() {
                if k == i || k == j {
                    continue;
                }
                let new_i = kernel.sigma_b(vec3::sub(vk, wi));
                let new_j = kernel.sigma_b(vec3::sub(vk, wj));
                let old = kernel.sigma_b(vec3::sub(vk, vi)) + kernel.sigma_b(vec3::sub(vk, vj));
                rates.rows[k] = (rates.rows[k] + (new_i + new_j) - old).max(0.0);
                row_i += new_i;
                row_j += new_j;
            }
            let sij = kernel.sigma_b(vec3::sub(wi, wj));
            rates.rows[i] = row_i + sij;
            rates.rows[j] = row_j + sij;
            rates.tree.rebuild(&rates.rows);
        }
        self.velocities[i] = wi;
        self.velocities[j] = wj;
        self.max_speed = self.max_speed.max(vec3::norm(wi)).max(vec3::norm(wj));
    }

    fn apply_annihilation(&mut self, i: usize, j: usize) {
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        if let Some(rates) = self.rates.as_mut() {
            let (vi, vj) = (self.velocities[i], self.velocities[j]);
            for (k, &vk) in self.velocities.iter().enumerate() {
                if k == i || k == j {
                    continue;
                }
                let old =
                    self.kernel.sigma_b(vec3::sub(vk, vi)) + self.kernel.sigma_b(vec3::sub(vk, vj));
                rates.rows[k] = (rates.rows[k] - old).max(0.0);
            }
            rates.rows.swap_remove(hi);
            rates.rows.swap_remove(lo);
            if !rates.rows.is_empty() {
                rates.tree.rebuild(&rates.rows);
            } else {
                rates.tree.rebuild(&[0.0]);
            }
        }
        self.velocities.swap_remove(hi);
        self.velocities.swap_remove(lo);
    }

    /// Fires the selected pair: annihilation with probability alpha, else elastic scattering.
    fn fire_pair<R: Rng + ?Sized>(&mut self, i: usize, j: usize, rng: &mut R) -> EventKind {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        if rng.random::<f64>() < self.alpha {
            self.apply_annihilation(i, j);
            EventKind::Annihilation { i, j }
        } else {
            let u = vec3::sub(self.velocities[i], self.velocities[j]);
            let omega = self.kernel.sample_omega(u, rng);
            self.apply_elastic(i, j, omega);
            EventKind::Elastic { i, j, omega }
        }
    }

    fn uniform_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let n = self.n();
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        (i, j)
    }

    fn weighted_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let rates = self.rates.as_ref().expect("rate cache present");
        let i = rates.tree.find(rng.random::<f64>() * rates.tree.total());
        let vi = self.velocities[i];
        let target = rng.random::<f64>() * rates.rows[i];
        let mut acc = 0.0;
        let mut last = None;
        for (k, &vk) in self.velocities.iter().enumerate() {
            if k == i {
                continue;
            }
            let s = self.kernel.sigma_b(vec3::sub(vi, vk));
            if s > 0.0 {
                last = Some(k);
                acc += s;
                if acc > target {
                    return (i, k);
                }
            }
        }
        (i, last.unwrap_or(if i == 0 { 1 } else { 0 }))
    }

    /// Advances to the next exact event, or to `horizon` if the next event would
    /// fall later.
    pub fn advance_exact<R: Rng + ?Sized>(
        &mut self,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Option<Event>, DynamicsError> {
        if self.n() < 2 {
            return Err(DynamicsError::Absorbing { n: self.n() });
        }
        self.ensure_rate_cache();
        let rate = self.total_rate();
        if rate <= 0.0 {
            if horizon.is_finite() {
                self.time = horizon;
                return Ok(None);
            }
            return Err(DynamicsError::Frozen);
        }
        let dt: f64 = <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate;
        if self.time + dt > horizon {
            self.time = horizon;
            return Ok(None);
        }
        self.time += dt;
        let (i, j) = if self.kernel.is_constant_rate() {
            self.uniform_pair(rng)
        } else {
            self.weighted_pair(rng)
        };
        let kind = self.fire_pair(i, j, rng);
        Ok(Some(Event {
            time: self.time,
            kind,
        }))
    }

    /// Per-pair majorant `c_b * (2 max_speed)^gamma` used by null-collision scheduling.
    pub fn pair_majorant(&self) -> f64 {
        if self.kernel.is_constant_rate() {
            return 1.0;
        }
        self.kernel.c_b() * (2.0 * self.max_speed).powf(self.kernel.gamma())
    }

    /// Majorant-thinning counterpart of [`advance_exact`](Self::advance_exact).
    pub fn advance_majorant<R: Rng + ?Sized>(
        &mut self,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Option<Event>, DynamicsError> {
        let n = self.n();
        if n < 2 {
            return Err(DynamicsError::Absorbing { n });
        }
        let bound = self.pair_majorant();
        if bound <= 0.0 {
            if horizon.is_finite() {
                self.time = horizon;
                return Ok(None);
            }
            return Err(DynamicsError::Frozen);
        }
        let rate = (n * (n - 1)) as f64 / 2.0 * bound / self.lambda;
        let dt: f64 = <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / rate;
        if self.time + dt > horizon {
            self.time = horizon;
            return Ok(None);
        }
        self.time += dt;
        let (i, j) = self.uniform_pair(rng);
        let sigma = self
            .kernel
            .sigma_b(vec3::sub(self.velocities[i], self.velocities[j]));
        let ratio = sigma / bound;
        if ratio > 1.0 + 1e-12 {
            return Err(DynamicsError::MajorantViolation {
                time: self.time,
                ratio,
                i,
                j,
            });
        }
        let kind = if rng.random::<f64>() < ratio {
            self.fire_pair(i, j, rng)
        } else {
            EventKind::Null
        };
        Ok(Some(Event {
            time: self.time,
            kind,
        }))
    }

    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        mode: Mode,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Option<Event>, DynamicsError> {
        match mode {
            Mode::Exact => self.advance_exact(horizon, rng),
            Mode::Majorant => self.advance_majorant(horizon, rng),
        }
    }

    /// One exact Gillespie event.
    pub fn step_exact<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Event, DynamicsError> {
        Ok(self
            .advance_exact(f64::INFINITY, rng)?
            .expect("infinite horizon"))
    }

    /// One majorant proposal, accepted or [`EventKind::Null`].
    pub fn step_majorant<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Event, DynamicsError> {
        Ok(self
            .advance_majorant(f64::INFINITY, rng)?
            .expect("infinite horizon"))
    }
}

/// Observables recorded at one scheduled time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub n: usize,
    pub energy: f64,
    pub momentum: Vec3,
    pub velocities: Option<Vec<Vec3>>,
}

impl Snapshot {
    fn capture(state: &SystemState, t: f64, retain: bool) -> Self {
        Snapshot {
            t,
            n: state.n(),
            energy: state.kinetic_energy(),
            momentum: state.momentum(),
            velocities: retain.then(|| state.velocities.clone()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    /// Accepted events (elastic and annihilation).
    pub events: u64,
    /// Rejected majorant proposals.
    pub nulls: u64,
}

/// Runs the process through `snapshot_times`, recording a snapshot at each.
///
/// `on_event` sees the state right after every event, including null ones.
/// Absorbed states (N < 2) keep emitting snapshots.
pub fn simulate_with<R, F>(
    state: &mut SystemState,
    snapshot_times: &[f64],
    mode: Mode,
    retain_velocities: bool,
    rng: &mut R,
    mut on_event: F,
) -> Result<Trajectory, DynamicsError>
where
    R: Rng + ?Sized,
    F: FnMut(&SystemState, &Event),
{
    if snapshot_times.first().is_some_and(|&t0| t0 < state.time)
        || snapshot_times.windows(2).any(|w| w[1] < w[0])
    {
        return Err(DynamicsError::InvalidSchedule);
    }
    let mut traj = Trajectory {
        snapshots: Vec::with_capacity(snapshot_times.len()),
        ..Default::default()
    };
    for &ts in snapshot_times {
        while state.n() >= 2 {
            match state.advance(mode, ts, rng)? {
                None => break,
                Some(ev) => {
                    if matches!(ev.kind, EventKind::Null) {
                        traj.nulls += 1;
                    } else {
                        traj.events += 1;
                    }
                    on_event(state, &ev);
                }
            }
        }
        state.time = ts;
        traj.snapshots
            .push(Snapshot::capture(state, ts, retain_velocities));
    }
    Ok(traj)
}

pub fn simulate<R: Rng + ?Sized>(
    state: &mut SystemState,
    snapshot_times: &[f64],
    mode: Mode,
    retain_velocities: bool,
    rng: &mut R,
) -> Result<Trajectory, DynamicsError> {
    simulate_with(
        state,
        snapshot_times,
        mode,
        retain_velocities,
        rng,
        |_, _| {},
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::SigmaTable;
    use crate::rng::{stream, Purpose};
    use rand_distr::StandardNormal;

    fn gaussian_velocities<R: Rng>(n: usize, rng: &mut R) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                std::array::from_fn(|_| {
                    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                })
            })
            .collect()
    }

    #[test]
    fn head_on_collision_swaps() {
        let (a, b) = elastic_collide([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert_eq!(a, [-1.0, 0.0, 0.0]);
        assert_eq!(b, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_collisions_are_identity() {
        let v = [0.3, -1.0, 2.0];
        assert_eq!(elastic_collide(v, v, [0.0, 0.6, 0.8]), (v, v));
        let (a, b) = elastic_collide([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!((a, b), ([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]));
    }

    #[test]
    fn total_rate_examples() {
        let mut rng = stream(1, Purpose::Harness(10), 0);
        let s = SystemState::new(
            gaussian_velocities(10, &mut rng),
            10.0,
            0.5,
            CollisionKernel::Maxwell,
        )
        .unwrap();
        assert_eq!(s.total_rate(), 4.5);
        let s = SystemState::new(
            gaussian_velocities(2, &mut rng),
            1.0,
            0.5,
            CollisionKernel::Maxwell,
        )
        .unwrap();
        assert_eq!(s.total_rate(), 1.0);
        for n in [0, 1] {
            let s = SystemState::new(
                gaussian_velocities(n, &mut rng),
                1.0,
                0.5,
                CollisionKernel::HardSphere,
            )
            .unwrap();
            assert_eq!(s.total_rate(), 0.0);
        }
    }

    #[test]
    fn absorbing_state_is_an_error() {
        let mut rng = stream(2, Purpose::Harness(11), 0);
        let mut s = SystemState::new(vec![[0.0; 3]], 1.0, 0.5, CollisionKernel::Maxwell).unwrap();
        assert_eq!(
            s.step_exact(&mut rng).unwrap_err(),
            DynamicsError::Absorbing { n: 1 }
        );
        assert!(s.step_majorant(&mut rng).is_err());
    }

    #[test]
    fn pair_with_certain_annihilation() {
        let mut rng = stream(3, Purpose::Harness(12), 0);
        let mut s = SystemState::new(
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            1.0,
            1.0,
            CollisionKernel::Maxwell,
        )
        .unwrap();
        let ev = s.step_exact(&mut rng).unwrap();
        assert_eq!(ev.kind, EventKind::Annihilation { i: 0, j: 1 });
        assert!(ev.time > 0.0);
        assert_eq!(s.n(), 0);
    }

    #[test]
    fn survival_of_a_single_pair_is_exponential() {
        // P(N(t) = 2) = exp(-alpha t / lambda) for one Maxwell pair.
        let (alpha, lambda, t) = (0.5, 2.0, 1.5);
        let runs = 20_000;
        let mut alive = 0;
        for r in 0..runs {
            let mut rng = stream(4, Purpose::Harness(13), r);
            let mut s = SystemState::new(
                vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
                lambda,
                alpha,
                CollisionKernel::Maxwell,
            )
            .unwrap();
            let tr = simulate(&mut s, &[t], Mode::Exact, false, &mut rng).unwrap();
            alive += usize::from(tr.snapshots[0].n == 2);
        }
        let p = (-alpha * t / lambda).exp();
        let se = (p * (1.0 - p) / runs as f64).sqrt();
        let phat = alive as f64 / runs as f64;
        assert!((phat - p).abs() < 4.0 * se, "{phat} vs {p}");
    }

    #[test]
    fn alpha_zero_conserves_count() {
        let mut rng = stream(5, Purpose::Harness(14), 0);
        let v = gaussian_velocities(20, &mut rng);
        let mut s = SystemState::new(v, 20.0, 0.0, CollisionKernel::HardSphere).unwrap();
        let e0 = s.kinetic_energy();
        let tr = simulate(&mut s, &[0.0, 1.0, 2.0, 3.0], Mode::Exact, false, &mut rng).unwrap();
        assert!(tr.events > 0);
        for snap in &tr.snapshots {
            assert_eq!(snap.n, 20);
            assert!((snap.energy - e0).abs() <= 1e-9 * e0);
        }
    }

    #[test]
    fn snapshot_at_zero_is_initial_configuration() {
        let mut rng = stream(6, Purpose::Harness(15), 0);
        let v = gaussian_velocities(8, &mut rng);
        let mut s = SystemState::new(v.clone(), 8.0, 0.7, CollisionKernel::Maxwell).unwrap();
        let tr = simulate(&mut s, &[0.0, 0.5], Mode::Exact, true, &mut rng).unwrap();
        assert_eq!(tr.snapshots[0].velocities.as_deref(), Some(v.as_slice()));
        assert_eq!(tr.snapshots[0].t, 0.0);
        assert_eq!(tr.snapshots[1].t, 0.5);
    }

    #[test]
    fn schedule_must_be_sorted() {
        let mut rng = stream(7, Purpose::Harness(16), 0);
        let mut s =
            SystemState::new(vec![[0.0; 3]; 4], 4.0, 0.5, CollisionKernel::Maxwell).unwrap();
        assert_eq!(
            simulate(&mut s, &[1.0, 0.5], Mode::Exact, false, &mut rng).unwrap_err(),
            DynamicsError::InvalidSchedule
        );
    }

    #[test]
    fn rate_cache_stays_coherent() {
        let mut rng = stream(8, Purpose::Harness(17), 0);
        let v = gaussian_velocities(60, &mut rng);
        let mut s = SystemState::new(v, 60.0, 0.0, CollisionKernel::HardSphere).unwrap();
        for _ in 0..100_000 {
            s.step_exact(&mut rng).unwrap();
        }
        let err = s.rate_cache_error().unwrap();
        assert!(err <= 1e-9, "cache error {err}");
    }

    #[test]
    fn rate_cache_survives_annihilation() {
        let mut rng = stream(9, Purpose::Harness(18), 0);
        let v = gaussian_velocities(40, &mut rng);
        let mut s = SystemState::new(v, 40.0, 0.3, CollisionKernel::HardSphere).unwrap();
        while s.n() >= 4 {
            s.step_exact(&mut rng).unwrap();
            assert!(s.rate_cache_error().unwrap() <= 1e-9);
        }
    }

    #[test]
    fn maxwell_majorant_never_rejects() {
        let mut rng = stream(10, Purpose::Harness(19), 0);
        let v = gaussian_velocities(30, &mut rng);
        let mut s = SystemState::new(v, 30.0, 0.2, CollisionKernel::Maxwell).unwrap();
        while s.n() >= 2 {
            let ev = s.step_majorant(&mut rng).unwrap();
            assert_ne!(ev.kind, EventKind::Null);
        }
    }

    #[test]
    fn hard_sphere_majorant_ratio_is_bounded() {
        let mut rng = stream(11, Purpose::Harness(20), 0);
        let v = gaussian_velocities(30, &mut rng);
        let mut s = SystemState::new(v, 30.0, 0.2, CollisionKernel::HardSphere).unwrap();
        let mut nulls = 0;
        for _ in 0..5_000 {
            if s.n() < 2 {
                break;
            }
            if s.step_majorant(&mut rng).unwrap().kind == EventKind::Null {
                nulls += 1;
            }
            assert!(s
                .velocities()
                .iter()
                .all(|&v| vec3::norm(v) <= s.max_speed()));
        }
        assert!(nulls > 0);
    }

    #[test]
    fn majorant_violation_is_reported() {
        let mut rng = stream(12, Purpose::Harness(21), 0);
        let v = gaussian_velocities(10, &mut rng);
        let mut s = SystemState::new(v, 10.0, 0.2, CollisionKernel::HardSphere).unwrap();
        s.override_max_speed(1e-3);
        let err = s.step_majorant(&mut rng).unwrap_err();
        assert!(matches!(err, DynamicsError::MajorantViolation { ratio, .. } if ratio > 1.0));
    }

    #[test]
    fn custom_kernel_runs_in_both_modes() {
        let table = SigmaTable::new(vec![0.0, 1.0, 4.0], vec![0.0, 0.5, 1.0]).unwrap();
        let kernel = CollisionKernel::bounded_custom(0.5, 1.0, table).unwrap();
        for mode in [Mode::Exact, Mode::Majorant] {
            let mut rng = stream(13, Purpose::Harness(22), 0);
            let v = gaussian_velocities(20, &mut rng);
            let mut s = SystemState::new(v, 20.0, 0.5, kernel.clone()).unwrap();
            let tr = simulate(&mut s, &[0.0, 1.0, 5.0], mode, false, &mut rng).unwrap();
            assert!(tr.snapshots[2].n < 20);
        }
    }

    #[test]
    fn fenwick_find_respects_weights() {
        let mut t = SumTree::default();
        t.rebuild(&[1.0, 0.0, 2.0, 3.0]);
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.9), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(5.99), 3);
    }
}
