//! Self-similar variables `xi = (v - u_f) / sqrt(2 T_f)` and rescaled time `tau`.
//!
//! `n_f`, `u_f` and `T_f` are ensemble estimates of the density, bulk velocity
//! and temperature of `f_1`. Under the change of variables the rescaled
//! density has mass 1, zero mean and second moment 3/2 at all times.

use serde::Serialize;
use thiserror::Error;

use crate::ensemble::{Ensemble, EnsembleError};
use crate::stats::{jackknife, pairwise_sum};
use crate::vec3::{self, Vec3};

#[derive(Debug, Error)]
pub enum SelfSimError {
    #[error("zero temperature at t = {t}: the sample has no velocity spread")]
    ZeroTemperature { t: f64 },
    #[error("no particles left at t = {t}")]
    Empty { t: f64 },
    #[error("split-sample mode needs at least 4 realizations, got {0}")]
    TooFewRealizations(usize),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfSimilarFrame {
    pub t: f64,
    pub n_f: f64,
    pub u_f: Vec3,
    pub t_f: f64,
    pub tau: f64,
}

impl SelfSimilarFrame {
    fn from_moments(t: f64, m: &[f64]) -> Result<Self, SelfSimError> {
        let n_f = m[0];
        if !(n_f > 0.0) {
            return Err(SelfSimError::Empty { t });
        }
        let u_f = [m[1] / n_f, m[2] / n_f, m[3] / n_f];
        let t_f = (m[4] / n_f - vec3::norm_sq(u_f)) / 3.0;
        if !(t_f > 1e-14 * (m[4] / n_f)) {
            return Err(SelfSimError::ZeroTemperature { t });
        }
        Ok(SelfSimilarFrame {
            t,
            n_f,
            u_f,
            t_f,
            tau: 0.0,
        })
    }
}

/// `[eps N, eps sum v, eps sum |v|^2]` for one configuration.
fn moment_row(eps: f64, v: &[Vec3]) -> Vec<f64> {
    let col = |f: &dyn Fn(&Vec3) -> f64| eps * pairwise_sum(&v.iter().map(f).collect::<Vec<_>>());
    vec![
        eps * v.len() as f64,
        col(&|x| x[0]),
        col(&|x| x[1]),
        col(&|x| x[2]),
        col(&|x| vec3::norm_sq(*x)),
    ]
}

fn scalar_rows(ens: &Ensemble, s: usize) -> Vec<Vec<f64>> {
    let eps = ens.epsilon();
    (0..ens.realizations())
        .map(|r| {
            let rec = ens.scalar(r, s);
            vec![
                eps * rec.n as f64,
                eps * rec.momentum[0],
                eps * rec.momentum[1],
                eps * rec.momentum[2],
                eps * rec.energy,
            ]
        })
        .collect()
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    (0..dim)
        .map(|c| pairwise_sum(&rows.iter().map(|r| r[c]).collect::<Vec<_>>()) / rows.len() as f64)
        .collect()
}

/// Frame at snapshot `s` with `tau = 0`, from the recorded per-realization moments.
pub fn compute_frame(ens: &Ensemble, s: usize) -> Result<SelfSimilarFrame, SelfSimError> {
    SelfSimilarFrame::from_moments(ens.times()[s], &column_means(&scalar_rows(ens, s)))
}

/// Frames at every snapshot, with `tau(t) = sqrt(2) int_0^t n_f sqrt(T_f) ds` by the trapezoid rule.
pub fn compute_frames(ens: &Ensemble) -> Result<Vec<SelfSimilarFrame>, SelfSimError> {
    let mut frames: Vec<SelfSimilarFrame> = (0..ens.times().len())
        .map(|s| compute_frame(ens, s))
        .collect::<Result<_, _>>()?;
    let g = |f: &SelfSimilarFrame| f.n_f * f.t_f.sqrt();
    let mut tau = std::f64::consts::SQRT_2 * ens.times()[0] * g(&frames[0]);
    frames[0].tau = tau;
    for k in 1..frames.len() {
        tau += std::f64::consts::SQRT_2
            * 0.5
            * (frames[k].t - frames[k - 1].t)
            * (g(&frames[k]) + g(&frames[k - 1]));
        frames[k].tau = tau;
    }
    Ok(frames)
}

/// Jackknife standard errors of `(n_f, u_f, T_f)` at snapshot `s`.
pub fn frame_stderr(ens: &Ensemble, s: usize) -> Option<[f64; 5]> {
    let rows = scalar_rows(ens, s);
    let pick = |k: usize| {
        jackknife(&rows, |m| match SelfSimilarFrame::from_moments(0.0, m) {
            Ok(f) => [f.n_f, f.u_f[0], f.u_f[1], f.u_f[2], f.t_f][k],
            Err(_) => f64::NAN,
        })
        .1
    };
    let out: Vec<Option<f64>> = (0..5).map(pick).collect();
    out.iter()
        .all(Option::is_some)
        .then(|| std::array::from_fn(|k| out[k].unwrap()))
}

pub fn rescale_velocities(
    sample: &[Vec3],
    frame: &SelfSimilarFrame,
) -> Result<Vec<Vec3>, SelfSimError> {
    if !(frame.t_f > 0.0) {
        return Err(SelfSimError::ZeroTemperature { t: frame.t });
    }
    let k = 1.0 / (2.0 * frame.t_f).sqrt();
    Ok(sample
        .iter()
        .map(|&v| vec3::scale(vec3::sub(v, frame.u_f), k))
        .collect())
}

/// Inverse of [`rescale_velocities`].
pub fn unscale_velocities(xi: &[Vec3], frame: &SelfSimilarFrame) -> Vec<Vec3> {
    let k = (2.0 * frame.t_f).sqrt();
    xi.iter()
        .map(|&x| vec3::add(vec3::scale(x, k), frame.u_f))
        .collect()
}

/// Deviations of the rescaled `(mass, momentum, energy)` from `(1, 0, 3/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConservationRow {
    pub t: f64,
    pub dev_mass: f64,
    pub dev_momentum: Vec3,
    pub dev_energy: f64,
    /// Jackknife errors in split-sample mode.
    pub stderr: Option<[f64; 5]>,
}

impl ConservationRow {
    pub fn deviations(&self) -> [f64; 5] {
        [
            self.dev_mass,
            self.dev_momentum[0],
            self.dev_momentum[1],
            self.dev_momentum[2],
            self.dev_energy,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.deviations().iter().fold(0.0, |a, d| a.max(d.abs()))
    }

    /// Largest `|deviation| / stderr`.
    pub fn max_z(&self) -> Option<f64> {
        let se = self.stderr?;
        Some(
            self.deviations()
                .iter()
                .zip(se)
                .fold(0.0, |a, (d, s)| a.max(d.abs() / s)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckMode {
    /// Frame and rescaled moments from the same velocities.
    SameSample,
    /// Frame from even-indexed realizations, moments from odd-indexed ones.
    SplitSample,
}

/// Rescaled moments of the sample `b` in the frame estimated from `a`, both as column means.
fn split_deviations(a: &[f64], b: &[f64]) -> Result<[f64; 5], SelfSimError> {
    let f = SelfSimilarFrame::from_moments(0.0, a)?;
    let scale = (2.0 * f.t_f).sqrt();
    let p_b = [b[1], b[2], b[3]];
    let mass = b[0] / f.n_f;
    let mom = vec3::scale(
        vec3::sub(p_b, vec3::scale(f.u_f, b[0])),
        1.0 / (f.n_f * scale),
    );
    let energy =
        (b[4] - 2.0 * vec3::dot(f.u_f, p_b) + vec3::norm_sq(f.u_f) * b[0]) / (2.0 * f.t_f * f.n_f);
    Ok([mass - 1.0, mom[0], mom[1], mom[2], energy - 1.5])
}

pub fn conserved_check(
    ens: &Ensemble,
    snapshots: &[usize],
    mode: CheckMode,
) -> Result<Vec<ConservationRow>, SelfSimError> {
    let eps = ens.epsilon();
    let m = ens.realizations();
    snapshots
        .iter()
        .map(|&s| {
            let t = ens.times()[s];
            match mode {
                CheckMode::SameSample => {
                    let rows = ens.map_realizations(s, |_, v| moment_row(eps, v))?;
                    let frame = SelfSimilarFrame::from_moments(t, &column_means(&rows))?;
                    let xi_rows: Vec<Vec<f64>> = ens
                        .map_realizations(s, |_, v| {
                            rescale_velocities(v, &frame).map(|xi| moment_row(eps, &xi))
                        })?
                        .into_iter()
                        .collect::<Result<_, _>>()?;
                    let x = column_means(&xi_rows);
                    Ok(ConservationRow {
                        t,
                        dev_mass: x[0] / frame.n_f - 1.0,
                        dev_momentum: [x[1] / frame.n_f, x[2] / frame.n_f, x[3] / frame.n_f],
                        dev_energy: x[4] / frame.n_f - 1.5,
                        stderr: None,
                    })
                }
                CheckMode::SplitSample => {
                    if m < 4 {
                        return Err(SelfSimError::TooFewRealizations(m));
                    }
                    let rows = scalar_rows(ens, s);
                    let paired: Vec<Vec<f64>> = (0..m / 2)
                        .map(|k| {
                            rows[2 * k]
                                .iter()
                                .chain(&rows[2 * k + 1])
                                .copied()
                                .collect()
                        })
                        .collect();
                    let d =
                        split_deviations(&column_means(&paired)[..5], &column_means(&paired)[5..])?;
                    let se: Vec<Option<f64>> = (0..5)
                        .map(|k| {
                            jackknife(&paired, |c| {
                                split_deviations(&c[..5], &c[5..]).map_or(f64::NAN, |d| d[k])
                            })
                            .1
                        })
                        .collect();
                    Ok(ConservationRow {
                        t,
                        dev_mass: d[0],
                        dev_momentum: [d[1], d[2], d[3]],
                        dev_energy: d[4],
                        stderr: se
                            .iter()
                            .all(Option::is_some)
                            .then(|| std::array::from_fn(|k| se[k].unwrap())),
                    })
                }
            }
        })
        .collect()
}
