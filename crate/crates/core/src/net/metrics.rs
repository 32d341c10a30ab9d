use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{BlockSpec, ResidualNet};
use crate::ot::PointCloud;
use crate::{Error, Result};

/// Pairs `(i, j)` with `i < j`, visited by increasing offset `j − i` so
/// that a small budget still touches every point.
fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..n).flat_map(move |off| (0..n - off).map(move |i| (i, i + off)))
}

fn max_ratio(inputs: &Array2<f64>, outputs: &Array2<f64>, pair_budget: usize) -> Result<f64> {
    if inputs.nrows() < 2 {
        return Err(Error::invalid("Lipschitz probe needs at least two points"));
    }
    let mut best: Option<f64> = None;
    let mut used = 0;
    for (i, j) in pairs(inputs.nrows()) {
        if used >= pair_budget {
            break;
        }
        let dx = (&inputs.row(i) - &inputs.row(j))
            .mapv(|v| v * v)
            .sum()
            .sqrt();
        if dx == 0.0 {
            continue;
        }
        used += 1;
        let dy = (&outputs.row(i) - &outputs.row(j))
            .mapv(|v| v * v)
            .sum()
            .sqrt();
        let r = dy / dx;
        best = Some(best.map_or(r, |b: f64| b.max(r)));
    }
    best.ok_or_else(|| Error::invalid("Lipschitz probe has no pair of distinct points"))
}

/// Empirical Lipschitz lower bound of one block: the largest
/// `‖T(x) − T(y)‖ / ‖x − y‖` over up to `pair_budget` probe pairs.
pub fn lipschitz_estimate_block(
    block: &BlockSpec,
    probe: &PointCloud,
    pair_budget: usize,
) -> Result<f64> {
    let x = probe.samples().to_owned();
    let y = block.apply(&x)?;
    max_ratio(&x, &y, pair_budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub per_block: Vec<f64>,
    /// Product of the per-block estimates, a surrogate for the network bound.
    pub product: f64,
}

/// Per-block estimates with each block probed on its own inputs when the
/// network is fed `probe`.
pub fn lipschitz_report(
    net: &ResidualNet,
    probe: &PointCloud,
    pair_budget: usize,
) -> Result<LipschitzReport> {
    let states = net.trace(&probe.samples().to_owned())?;
    let mut per_block = Vec::with_capacity(net.blocks.len());
    for k in 0..net.blocks.len() {
        per_block.push(max_ratio(&states[k], &states[k + 1], pair_budget)?);
    }
    let product = per_block.iter().product();
    Ok(LipschitzReport { per_block, product })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Affine, BlockState};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn probe(n: usize, d: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(Array2::from_shape_fn((n, d), |_| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap()
    }

    fn identity_affine(d: usize) -> Affine {
        Affine {
            weight: Array2::eye(d),
            bias: Array2::zeros((1, d)),
        }
    }

    #[test]
    fn identity_block_is_one() {
        let mut b =
            BlockSpec::new(Affine::zeros(3, 3), Affine::zeros(3, 3), Activation::Relu).unwrap();
        b.state = BlockState::Identity;
        assert_eq!(
            lipschitz_estimate_block(&b, &probe(10, 3, 0), 20).unwrap(),
            1.0
        );
    }

    #[test]
    fn doubling_block_is_two() {
        // x + I(I x) = 2x
        let b = BlockSpec::new(identity_affine(4), identity_affine(4), Activation::Linear).unwrap();
        let l = lipschitz_estimate_block(&b, &probe(12, 4, 1), 30).unwrap();
        assert!((l - 2.0).abs() < 1e-6);
    }

    #[test]
    fn duplicate_probe_is_an_error() {
        let b = BlockSpec::new(identity_affine(2), identity_affine(2), Activation::Relu).unwrap();
        let c = PointCloud::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(lipschitz_estimate_block(&b, &c, 5).is_err());
        let single = PointCloud::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert!(lipschitz_estimate_block(&b, &single, 5).is_err());
    }

    #[test]
    fn pair_order_covers_points() {
        let p: Vec<_> = pairs(4).collect();
        assert_eq!(p, vec![(0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)]);
    }
}
