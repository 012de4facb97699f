//! Reductions and goodness-of-fit statistics shared by estimators and checks.
//!
//! All reductions run in slice order through a pairwise tree, so a fixed
//! input order yields bit-identical results regardless of threading.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sum with a fixed pairwise-tree reduction order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample mean with its standard error; the error is absent for fewer than two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: Option<f64>,
    pub count: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            stderr: Some(0.0),
            count: 0,
        }
    }

    /// Standard error, with an absent error treated as infinite.
    pub fn se(&self) -> f64 {
        self.stderr.unwrap_or(f64::INFINITY)
    }

    /// `|value - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se()
    }
}

pub fn mean_stderr(xs: &[f64]) -> Estimate {
    let n = xs.len();
    let m = mean(xs);
    let stderr = if n >= 2 && xs.iter().all(|&x| x == xs[0]) {
        Some(0.0)
    } else if n >= 2 {
        let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Some((var / n as f64).sqrt())
    } else {
        None
    };
    Estimate {
        value: m,
        stderr,
        count: n,
    }
}

/// Delete-one jackknife for a smooth function of column means.
///
/// `rows[r]` holds the per-realization vector; `f` maps a vector of column
/// means to the statistic. Returns the full-sample statistic and its jackknife
/// standard error (absent below two rows).
pub fn jackknife<F>(rows: &[Vec<f64>], f: F) -> (f64, Option<f64>)
where
    F: Fn(&[f64]) -> f64,
{
    let n = rows.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let dim = rows[0].len();
    let totals: Vec<f64> = (0..dim)
        .map(|c| pairwise_sum(&rows.iter().map(|row| row[c]).collect::<Vec<_>>()))
        .collect();
    let full = f(&totals.iter().map(|t| t / n as f64).collect::<Vec<_>>());
    if n < 2 {
        return (full, None);
    }
    let mut loo = vec![0.0; dim];
    let replicates: Vec<f64> = rows
        .iter()
        .map(|row| {
            for c in 0..dim {
                loo[c] = (totals[c] - row[c]) / (n - 1) as f64;
            }
            f(&loo)
        })
        .collect();
    let rbar = mean(&replicates);
    let ss: Vec<f64> = replicates.iter().map(|x| (x - rbar) * (x - rbar)).collect();
    let var = (n - 1) as f64 / n as f64 * pairwise_sum(&ss);
    (full, Some(var.sqrt()))
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test (asymptotic p-value with Stephens' correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
    }
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> KsResult {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (k, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max((k as f64 + 1.0) / n - c).max(c - k as f64 / n);
    }
    let sq = n.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed counts against expected counts.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> ChiSquareResult {
    assert_eq!(observed.len(), expected.len());
    let statistic: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = observed.len() - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    ChiSquareResult {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
    }
}

/// Total-variation distance `0.5 * sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
