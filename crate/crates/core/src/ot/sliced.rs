use ndarray::ArrayView1;
use rand::Rng;

use super::{Direction, DistanceConfig, MaxMode, PointCloud};
use crate::{Error, Result};

/// Sorted 1-D projection of a cloud together with the sorting permutation:
/// `values[i]` is the projection of row `permutation[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub values: Vec<f64>,
    pub permutation: Vec<usize>,
}

pub fn project(cloud: &PointCloud, direction: &Direction) -> Result<Projection> {
    if cloud.dim() != direction.dim() {
        return Err(Error::shape(format!(
            "cannot project {}-dimensional cloud on {}-dimensional direction",
            cloud.dim(),
            direction.dim()
        )));
    }
    let raw = cloud.samples().dot(&direction.as_array());
    let mut permutation: Vec<usize> = (0..raw.len()).collect();
    // stable: equal values keep index order
    permutation.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let values = permutation.iter().map(|&i| raw[i]).collect();
    Ok(Projection {
        values,
        permutation,
    })
}

/// Closed-form p-Wasserstein distance between two sorted, equally sized
/// 1-D samples.
pub fn wasserstein_1d(xs: &[f64], ys: &[f64], p: f64) -> Result<f64> {
    check_order(p)?;
    if xs.len() != ys.len() {
        return Err(Error::shape(format!(
            "1-D samples must have equal length, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return Err(Error::invalid("1-D samples are empty"));
    }
    for (name, s) in [("xs", xs), ("ys", ys)] {
        if let Some(i) = s.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::invalid(format!(
                "{name} is not sorted ascending at index {}",
                i + 1
            )));
        }
    }
    Ok(pth_root(mean_abs_pow(xs, ys, p), p))
}

fn mean_abs_pow(xs: &[f64], ys: &[f64], p: f64) -> f64 {
    let n = xs.len() as f64;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - y).abs().powf(p))
        .sum::<f64>()
        / n
}

fn pth_root(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v.sqrt()
    } else {
        v.powf(1.0 / p)
    }
}

fn check_order(p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("order p must be positive, got {p}")))
    }
}

/// `W_p(θ♯μ, θ♯ν)` for a single direction.
pub fn projected_distance(
    mu: &PointCloud,
    nu: &PointCloud,
    direction: &Direction,
    p: f64,
) -> Result<f64> {
    mu.check_same_shape(nu)?;
    let a = project(mu, direction)?;
    let b = project(nu, direction)?;
    wasserstein_1d(&a.values, &b.values, p)
}

/// Sliced distance over a given direction set: the p-th root of the mean of
/// the projected `W_p^p`.
pub fn sliced_with_directions(
    mu: &PointCloud,
    nu: &PointCloud,
    directions: &[Direction],
    p: f64,
) -> Result<f64> {
    if directions.is_empty() {
        return Err(Error::invalid("direction set is empty"));
    }
    let mut total = 0.0;
    for dir in directions {
        total += projected_distance(mu, nu, dir, p)?.powf(p);
    }
    Ok(pth_root(total / directions.len() as f64, p))
}

pub fn sliced_wasserstein<R: Rng + ?Sized>(
    mu: &PointCloud,
    nu: &PointCloud,
    cfg: &DistanceConfig,
    rng: &mut R,
) -> Result<f64> {
    mu.check_same_shape(nu)?;
    let dirs = cfg.directions(mu.dim(), rng)?;
    sliced_with_directions(mu, nu, &dirs, cfg.p)
}

/// Largest projected distance over `directions` and the index of the first
/// direction attaining it.
pub fn max_sliced_with_directions(
    mu: &PointCloud,
    nu: &PointCloud,
    directions: &[Direction],
    p: f64,
) -> Result<(f64, usize)> {
    if directions.is_empty() {
        return Err(Error::invalid("direction set is empty"));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, dir) in directions.iter().enumerate() {
        let d = projected_distance(mu, nu, dir, p)?;
        if d > best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxSliced {
    pub value: f64,
    pub direction: Direction,
}

pub fn max_sliced_wasserstein<R: Rng + ?Sized>(
    mu: &PointCloud,
    nu: &PointCloud,
    cfg: &DistanceConfig,
    rng: &mut R,
) -> Result<MaxSliced> {
    mu.check_same_shape(nu)?;
    let dirs = cfg.directions(mu.dim(), rng)?;
    let (value, idx) = max_sliced_with_directions(mu, nu, &dirs, cfg.p)?;
    let start = MaxSliced {
        value,
        direction: dirs[idx].clone(),
    };
    match cfg.max_mode {
        MaxMode::RandomSearch => Ok(start),
        MaxMode::ProjectedAscent => max_sliced_projected_ascent(
            mu,
            nu,
            start,
            cfg.p,
            cfg.ascent_iterations,
            cfg.ascent_step,
        ),
    }
}

/// Gradient ascent on the sphere from `start`, renormalizing after every
/// step. Returns the best direction visited, so the result never falls
/// below `start.value`.
pub fn max_sliced_projected_ascent(
    mu: &PointCloud,
    nu: &PointCloud,
    start: MaxSliced,
    p: f64,
    iterations: usize,
    step: f64,
) -> Result<MaxSliced> {
    mu.check_same_shape(nu)?;
    check_order(p)?;
    let n = mu.len() as f64;
    let (x, y) = (mu.samples(), nu.samples());
    let mut best = start;
    let mut theta = best.direction.clone();
    for _ in 0..iterations {
        let a = project(mu, &theta)?;
        let b = project(nu, &theta)?;
        let value = pth_root(mean_abs_pow(&a.values, &b.values, p), p);
        if value > best.value {
            best = MaxSliced {
                value,
                direction: theta.clone(),
            };
        }
        if value == 0.0 {
            break;
        }
        // dW/dθ = W^{1-p} · mean_i |s_i|^{p-1} sign(s_i) Δ_i with the sorted pairing frozen
        let scale = value.powf(1.0 - p) / n;
        let mut grad = vec![0.0; mu.dim()];
        for (i, (&ia, &ib)) in a.permutation.iter().zip(&b.permutation).enumerate() {
            let s = a.values[i] - b.values[i];
            let w = s.abs().powf(p - 1.0) * s.signum() * scale;
            let (xa, yb): (ArrayView1<f64>, ArrayView1<f64>) = (x.row(ia), y.row(ib));
            for (g, (xv, yv)) in grad.iter_mut().zip(xa.iter().zip(yb.iter())) {
                *g += w * (xv - yv);
            }
        }
        let next: Vec<f64> = theta
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(t, g)| t + step * g)
            .collect();
        match Direction::normalized(next) {
            Ok(d) => theta = d,
            Err(_) => break,
        }
    }
    let a = project(mu, &theta)?;
    let b = project(nu, &theta)?;
    let value = pth_root(mean_abs_pow(&a.values, &b.values, p), p);
    if value > best.value {
        best = MaxSliced {
            value,
            direction: theta,
        };
    }
    Ok(best)
}
