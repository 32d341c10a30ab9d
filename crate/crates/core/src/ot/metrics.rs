//! Alternative discrepancies between block input and output distributions.

use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::{Error, Result};

/// Variance floor used by the diagonal Gaussian fits.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L1,
    L2,
}

/// Median Euclidean distance over all distinct pairs of the pooled samples;
/// falls back to 1 when that median is zero or there is a single point.
pub fn median_pairwise_distance(mu: &PointCloud, nu: &PointCloud) -> f64 {
    let (a, b) = (mu.samples(), nu.samples());
    let rows: Vec<_> = a.rows().into_iter().chain(b.rows()).collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d2: f64 = rows[i]
                .iter()
                .zip(rows[j].iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

impl Bandwidth {
    pub fn resolve(self, mu: &PointCloud, nu: &PointCloud) -> Result<f64> {
        match self {
            Bandwidth::Fixed(s) if s > 0.0 && s.is_finite() => Ok(s),
            Bandwidth::Fixed(s) => Err(Error::invalid(format!(
                "bandwidth must be positive, got {s}"
            ))),
            Bandwidth::MedianHeuristic => Ok(median_pairwise_distance(mu, nu)),
        }
    }
}

fn mean_kernel(a: &PointCloud, b: &PointCloud, sigma: f64) -> f64 {
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let mut total = 0.0;
    for x in a.samples().rows() {
        for y in b.samples().rows() {
            let d2: f64 = x.iter().zip(y.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
            total += (-gamma * d2).exp();
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Gaussian-kernel MMD from the biased V-statistic, returned as the square
/// root of MMD².
pub fn mmd_rbf(mu: &PointCloud, nu: &PointCloud, bandwidth: Bandwidth) -> Result<f64> {
    mu.check_same_dim(nu)?;
    let sigma = bandwidth.resolve(mu, nu)?;
    let mmd2 =
        mean_kernel(mu, mu, sigma) + mean_kernel(nu, nu, sigma) - 2.0 * mean_kernel(mu, nu, sigma);
    Ok(mmd2.max(0.0).sqrt())
}

/// Per-dimension mean and unbiased variance (floored).
fn diag_fit(cloud: &PointCloud) -> (Vec<f64>, Vec<f64>) {
    let x = cloud.samples();
    let n = x.nrows() as f64;
    let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
    let var = x
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, m)| {
            let ss: f64 = c.iter().map(|v| (v - m) * (v - m)).sum();
            (ss / (n - 1.0)).max(VARIANCE_FLOOR)
        })
        .collect();
    (mean, var)
}

/// `KL(N(m₁, diag v₁) ‖ N(m₂, diag v₂))` between diagonal Gaussian fits of
/// the two clouds.
pub fn kl_diag_gaussian(mu: &PointCloud, nu: &PointCloud) -> Result<f64> {
    mu.check_same_dim(nu)?;
    if mu.len() < 2 || nu.len() < 2 {
        return Err(Error::invalid(
            "KL fit needs at least two samples per cloud",
        ));
    }
    let (m1, v1) = diag_fit(mu);
    let (m2, v2) = diag_fit(nu);
    let mut kl = 0.0;
    for j in 0..m1.len() {
        let dm = m1[j] - m2[j];
        kl += 0.5 * ((v2[j] / v1[j]).ln() + (v1[j] + dm * dm) / v2[j] - 1.0);
    }
    Ok(kl.max(0.0))
}

/// Mean row-wise distance between index-paired samples.
pub fn mean_lp(mu: &PointCloud, nu: &PointCloud, norm: Norm) -> Result<f64> {
    mu.check_same_shape(nu)?;
    let mut total = 0.0;
    for (x, y) in mu.samples().rows().into_iter().zip(nu.samples().rows()) {
        let diffs = x.iter().zip(y.iter()).map(|(a, b)| a - b);
        total += match norm {
            Norm::L1 => diffs.map(f64::abs).sum::<f64>(),
            Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        };
    }
    Ok(total / mu.len() as f64)
}
