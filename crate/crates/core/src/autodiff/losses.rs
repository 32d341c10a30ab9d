//! Composite layers and differentiable distribution distances built from
//! tape primitives.

use ndarray::{Array1, Array2};

use super::tape::{SortRecord, Tape, Var};
use crate::ot::{Direction, Norm};
use crate::{Error, Result};

/// `x W + b`.
pub fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_bias(xw, b)
}

pub fn relu(tape: &mut Tape, x: Var) -> Var {
    tape.relu(x)
}

/// Skip connection `x + f(x)`.
pub fn residual_add(tape: &mut Tape, x: Var, fx: Var) -> Result<Var> {
    tape.add(x, fx)
}

pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy(logits, labels)
}

/// Sorts a single-column (n×1) node.
pub fn sort_1d(tape: &mut Tape, x: Var) -> Result<(Var, SortRecord)> {
    if tape.value(x).ncols() != 1 {
        return Err(Error::shape(format!(
            "sort_1d expects an n x 1 column, got {:?}",
            tape.value(x).dim()
        )));
    }
    let (y, mut records) = tape.sort_columns(x);
    Ok((y, records.remove(0)))
}

fn check_pair(tape: &Tape, mu: Var, nu: Var) -> Result<(usize, usize)> {
    let (a, b) = (tape.value(mu).dim(), tape.value(nu).dim());
    if a != b {
        return Err(Error::shape(format!("distribution rows {a:?} vs {b:?}")));
    }
    if a.0 == 0 {
        return Err(Error::invalid("empty sample set"));
    }
    Ok(a)
}

fn directions_matrix(directions: &[Direction], d: usize) -> Result<Array2<f64>> {
    if directions.is_empty() {
        return Err(Error::invalid("direction set is empty"));
    }
    let mut m = Array2::zeros((d, directions.len()));
    for (j, dir) in directions.iter().enumerate() {
        if dir.dim() != d {
            return Err(Error::shape(format!(
                "direction of dimension {} for {d}-dimensional samples",
                dir.dim()
            )));
        }
        m.column_mut(j).assign(&dir.as_array());
    }
    Ok(m)
}

/// `(mean |a_sorted − b_sorted|^p)^{1/p}` per direction, from forward values only.
fn projected_distances(mu: &Array2<f64>, nu: &Array2<f64>, dirs: &Array2<f64>, p: f64) -> Vec<f64> {
    let pa = mu.dot(dirs);
    let pb = nu.dot(dirs);
    let n = mu.nrows() as f64;
    pa.columns()
        .into_iter()
        .zip(pb.columns())
        .map(|(ca, cb)| {
            let mut a: Vec<f64> = ca.to_vec();
            let mut b: Vec<f64> = cb.to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let m = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs().powf(p))
                .sum::<f64>()
                / n;
            m.powf(1.0 / p)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct MswEval {
    /// Scalar distance node.
    pub value: Var,
    /// Index of the maximizing direction, the only one carrying gradient.
    pub direction_index: usize,
}

/// Max-sliced `W_p` between the rows of `mu` and `nu` over `directions`.
///
/// The maximizing direction is chosen on forward values and then held
/// fixed, so gradients flow only through the sorted projections onto that
/// direction. The gradient at zero distance is zero.
pub fn msw_loss(
    tape: &mut Tape,
    mu: Var,
    nu: Var,
    directions: &[Direction],
    p: f64,
) -> Result<MswEval> {
    let (_, d) = check_pair(tape, mu, nu)?;
    let dirs = directions_matrix(directions, d)?;
    let dists = projected_distances(tape.value(mu), tape.value(nu), &dirs, p);
    let mut best = 0;
    for (i, v) in dists.iter().enumerate() {
        if *v > dists[best] {
            best = i;
        }
    }
    tape.record_decision(best as u64);
    let theta: Array1<f64> = directions[best].as_array().to_owned();
    let theta = tape.leaf(theta.insert_axis(ndarray::Axis(1)));
    let value = sorted_projection_distance(tape, mu, nu, theta, p)?;
    Ok(MswEval {
        value,
        direction_index: best,
    })
}

fn sorted_projection_distance(tape: &mut Tape, mu: Var, nu: Var, dirs: Var, p: f64) -> Result<Var> {
    let pm = tape.matmul(mu, dirs)?;
    let pn = tape.matmul(nu, dirs)?;
    let (sm, _) = tape.sort_columns(pm);
    let (sn, _) = tape.sort_columns(pn);
    let diff = tape.sub(sm, sn)?;
    let powered = tape.abs_pow(diff, p);
    let mean = tape.mean(powered);
    tape.root(mean, p)
}

/// Sliced `W_p`: p-th root of the mean projected `W_p^p` over all directions.
pub fn sliced_loss(
    tape: &mut Tape,
    mu: Var,
    nu: Var,
    directions: &[Direction],
    p: f64,
) -> Result<Var> {
    let (_, d) = check_pair(tape, mu, nu)?;
    let dirs = directions_matrix(directions, d)?;
    let dirs = tape.leaf(dirs);
    sorted_projection_distance(tape, mu, nu, dirs, p)
}

/// Mean row-wise ℓ1 or ℓ2 distance between index-paired rows.
pub fn mean_lp_loss(tape: &mut Tape, mu: Var, nu: Var, norm: Norm) -> Result<Var> {
    check_pair(tape, mu, nu)?;
    let diff = tape.sub(mu, nu)?;
    let per_row = match norm {
        Norm::L1 => {
            let a = tape.abs_pow(diff, 1.0);
            tape.sum_cols(a)
        }
        Norm::L2 => {
            let sq = tape.abs_pow(diff, 2.0);
            let s = tape.sum_cols(sq);
            tape.root(s, 2.0)?
        }
    };
    Ok(tape.mean(per_row))
}

/// Gaussian-kernel MMD (biased V-statistic) with a fixed bandwidth.
pub fn mmd_rbf_loss(tape: &mut Tape, mu: Var, nu: Var, sigma: f64) -> Result<Var> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    let gamma = -1.0 / (2.0 * sigma * sigma);
    let kernel_mean = |tape: &mut Tape, a: Var, b: Var| -> Result<Var> {
        let d2 = tape.pairwise_sq_dist(a, b)?;
        let scaled = tape.scale(d2, gamma);
        let k = tape.exp(scaled);
        Ok(tape.mean(k))
    };
    let kxx = kernel_mean(tape, mu, mu)?;
    let kyy = kernel_mean(tape, nu, nu)?;
    let kxy = kernel_mean(tape, mu, nu)?;
    let within = tape.add(kxx, kyy)?;
    let cross = tape.scale(kxy, 2.0);
    let mmd2 = tape.sub(within, cross)?;
    let mmd2 = tape.clamp_min(mmd2, 0.0);
    tape.root(mmd2, 2.0)
}

fn diag_fit(tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
    let n = tape.value(x).nrows();
    if n < 2 {
        return Err(Error::invalid("KL fit needs at least two samples"));
    }
    let mean = tape.mean_rows(x);
    let spread = tape.broadcast_rows(mean, n)?;
    let centered = tape.sub(x, spread)?;
    let sq = tape.abs_pow(centered, 2.0);
    let var = tape.mean_rows(sq);
    let var = tape.scale(var, n as f64 / (n as f64 - 1.0));
    let var = tape.clamp_min(var, crate::ot::VARIANCE_FLOOR);
    Ok((mean, var))
}

/// KL divergence between diagonal Gaussian fits of `mu` and `nu`.
pub fn kl_diag_gaussian_loss(tape: &mut Tape, mu: Var, nu: Var) -> Result<Var> {
    let (a, b) = (tape.value(mu).ncols(), tape.value(nu).ncols());
    if a != b {
        return Err(Error::shape(format!(
            "KL between {a}- and {b}-dimensional samples"
        )));
    }
    let (m1, v1) = diag_fit(tape, mu)?;
    let (m2, v2) = diag_fit(tape, nu)?;
    let dm = tape.sub(m1, m2)?;
    let dm2 = tape.abs_pow(dm, 2.0);
    let num = tape.add(v1, dm2)?;
    let ratio = tape.div(num, v2)?;
    let ln2 = tape.ln(v2);
    let ln1 = tape.ln(v1);
    let log_ratio = tape.sub(ln2, ln1)?;
    let terms = tape.add(log_ratio, ratio)?;
    let total = tape.sum(terms);
    let shifted = tape.add_scalar(total, -(a as f64));
    Ok(tape.scale(shifted, 0.5))
}
