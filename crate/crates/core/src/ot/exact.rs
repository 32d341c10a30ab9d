use super::PointCloud;
use crate::{Error, Result};

/// Largest cloud size accepted by [`exact_wasserstein_small`] (8! bijections).
pub const MAX_EXACT_POINTS: usize = 8;

/// Exact p-Wasserstein distance under cost `‖x − y‖_p^p`, by enumerating
/// every bijection between the two clouds (Heap's algorithm).
pub fn exact_wasserstein_small(mu: &PointCloud, nu: &PointCloud, p: f64) -> Result<f64> {
    mu.check_same_shape(nu)?;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!("order p must be positive, got {p}")));
    }
    let n = mu.len();
    if n > MAX_EXACT_POINTS {
        return Err(Error::invalid(format!(
            "exact enumeration supports at most {MAX_EXACT_POINTS} points, got {n}; \
             larger problems need an assignment solver, which is not provided"
        )));
    }
    let (x, y) = (mu.samples(), nu.samples());
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = x
                .row(i)
                .iter()
                .zip(y.row(j).iter())
                .map(|(a, b)| (a - b).abs().powf(p))
                .sum();
        }
    }
    let total = |perm: &[usize]| {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| cost[i * n + j])
            .sum::<f64>()
    };

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = total(&perm);
    let mut counters = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            best = best.min(total(&perm));
            counters[i] += 1;
            i = 1;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(rows: &[[f64; 2]]) -> PointCloud {
        PointCloud::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn same_multiset_is_zero() {
        let mu = cloud(&[[0.0, 0.0], [1.0, 0.0]]);
        let nu = cloud(&[[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(exact_wasserstein_small(&mu, &nu, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn vertical_matching() {
        let mu = cloud(&[[0.0, 0.0], [1.0, 0.0]]);
        let nu = cloud(&[[0.0, 1.0], [1.0, 1.0]]);
        assert!((exact_wasserstein_small(&mu, &nu, 2.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_many_points_is_an_error() {
        let rows: Vec<[f64; 2]> = (0..9).map(|i| [i as f64, 0.0]).collect();
        let c = cloud(&rows);
        let err = exact_wasserstein_small(&c, &c, 2.0).unwrap_err();
        assert!(err.to_string().contains("assignment solver"));
    }
}
