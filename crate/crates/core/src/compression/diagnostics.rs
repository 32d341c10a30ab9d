use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::objective::{term_gradients_with, DirectionBank};
use super::{Samples, TrainConfig};
use crate::net::ResidualNet;
use crate::ot::{max_sliced_with_directions, Direction, DistanceConfig, PointCloud};
use crate::{Error, Result};

/// Cosine similarity, or `(0, true)` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> (f64, bool) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    ((dot / (na * nb)).clamp(-1.0, 1.0), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAlignment {
    pub group: String,
    pub block: Option<usize>,
    pub cosine: f64,
    /// Set when either gradient vanishes on this group.
    pub degenerate: bool,
}

/// Cosine between `∂L/∂w` and `∂R/∂w` on every parameter group.
pub fn gradient_alignment<R: Rng + ?Sized>(
    net: &ResidualNet,
    batch: &Samples,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<GroupAlignment>> {
    let bank = DirectionBank::draw(net, cfg, rng)?;
    let terms = term_gradients_with(net, batch, cfg, &bank)?;
    let (gl, gr) = (terms.grad_loss, terms.grad_regularizer);
    let flat =
        |gs: &[Array2<f64>]| -> Vec<f64> { gs.iter().flat_map(|g| g.iter().copied()).collect() };
    Ok(net
        .param_groups()
        .into_iter()
        .map(|g| {
            let (cosine, degenerate) =
                cosine(&flat(&gl[g.arrays.clone()]), &flat(&gr[g.arrays.clone()]));
            GroupAlignment {
                group: g.name,
                block: g.block,
                cosine,
                degenerate,
            }
        })
        .collect())
}

/// Space in which the label distribution is compared with block activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEmbedding {
    /// Every activation cloud is pushed through the head; labels are one-hot logits.
    HeadLogits,
    /// Activations stay in feature space; one-hot labels are zero-padded to its width.
    PaddedFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleCheck {
    /// Distance from the first block's input to the labels.
    pub lhs: f64,
    /// Sum of the per-block distances plus `tail`.
    pub rhs: f64,
    pub block_terms: Vec<f64>,
    /// Distance from the last block's output to the labels.
    pub tail: f64,
    pub holds: bool,
}

const TRIANGLE_SLACK: f64 = 1e-6;

fn one_hot(labels: &[usize], width: usize) -> Result<Array2<f64>> {
    let mut gt = Array2::zeros((labels.len(), width));
    for (i, &l) in labels.iter().enumerate() {
        if l >= width {
            return Err(Error::shape(format!(
                "label {l} does not fit a {width}-wide embedding"
            )));
        }
        gt[[i, l]] = 1.0;
    }
    Ok(gt)
}

/// Chain bound `d(μ_1, GT) ≤ Σ_k d(μ_k, ν_k) + d(ν_K, GT)` under max-sliced
/// `W_p` restricted to one shared direction set, where the inequality is exact.
pub fn triangle_bound_with(
    net: &ResidualNet,
    batch: &Samples,
    embedding: LabelEmbedding,
    directions: &[Direction],
    p: f64,
) -> Result<TriangleCheck> {
    let width = net.feature_dim();
    if let Some((k, b)) = net
        .blocks
        .iter()
        .enumerate()
        .find(|(_, b)| b.in_dim != width || b.out_dim != width)
    {
        return Err(Error::shape(format!(
            "block {k} maps {} -> {}; the chain needs every block at width {width}",
            b.in_dim, b.out_dim
        )));
    }
    batch.check_labels(net.num_classes)?;
    let states = net.trace(&batch.features)?;
    let (clouds, gt) = match embedding {
        LabelEmbedding::HeadLogits => {
            let clouds = states
                .iter()
                .map(|s| net.head.apply(s))
                .collect::<Result<Vec<_>>>()?;
            (clouds, one_hot(&batch.labels, net.num_classes)?)
        }
        LabelEmbedding::PaddedFeatures => {
            if net.num_classes > width {
                return Err(Error::shape(format!(
                    "{} classes cannot be embedded in {width}-dimensional features",
                    net.num_classes
                )));
            }
            (states, one_hot(&batch.labels, width)?)
        }
    };
    let clouds = clouds
        .into_iter()
        .map(PointCloud::new)
        .collect::<Result<Vec<_>>>()?;
    let gt = PointCloud::new(gt)?;
    let dist = |a: &PointCloud, b: &PointCloud| {
        max_sliced_with_directions(a, b, directions, p).map(|r| r.0)
    };
    let lhs = dist(&clouds[0], &gt)?;
    let block_terms = clouds
        .windows(2)
        .map(|w| dist(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    let tail = dist(clouds.last().expect("at least one state"), &gt)?;
    let rhs = block_terms.iter().sum::<f64>() + tail;
    Ok(TriangleCheck {
        lhs,
        rhs,
        block_terms,
        tail,
        holds: lhs <= rhs + TRIANGLE_SLACK,
    })
}

/// [`triangle_bound_with`] using one set of `cfg.n_proj` directions drawn for the comparison space.
pub fn triangle_bound_check<R: Rng + ?Sized>(
    net: &ResidualNet,
    batch: &Samples,
    embedding: LabelEmbedding,
    cfg: &DistanceConfig,
    rng: &mut R,
) -> Result<TriangleCheck> {
    let dim = match embedding {
        LabelEmbedding::HeadLogits => net.num_classes,
        LabelEmbedding::PaddedFeatures => net.feature_dim(),
    };
    let directions = cfg.directions(dim, rng)?;
    triangle_bound_with(net, batch, embedding, &directions, cfg.p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (ResidualNet, Samples) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = ResidualNet::build(2, &[5, 5, 5], 3, &mut rng).unwrap();
        let x = Array2::from_shape_fn((15, 2), |_| rng.random_range(-2.0..2.0));
        let labels = (0..15).map(|i| i % 3).collect();
        (net, Samples::new(x, labels).unwrap())
    }

    #[test]
    fn cosine_edge_cases() {
        let a = [1.0, -2.0, 0.5];
        let (c, flag) = cosine(&a, &a);
        assert!((c - 1.0).abs() < 1e-9 && !flag);
        assert_eq!(cosine(&a, &[0.0; 3]), (0.0, true));
        assert!((cosine(&a, &[-1.0, 2.0, -0.5]).0 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn head_gradient_is_orthogonal_to_regularizer() {
        let (net, batch) = setup(1);
        let out = gradient_alignment(
            &net,
            &batch,
            &TrainConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let head = out.iter().find(|g| g.group == "head").unwrap();
        assert!(head.degenerate && head.cosine == 0.0);
        assert!(out.iter().all(|g| (-1.0..=1.0).contains(&g.cosine)));
        assert!(out.iter().any(|g| !g.degenerate));
    }

    #[test]
    fn identity_chain_collapses_to_equality() {
        let (mut net, batch) = setup(2);
        for k in 0..3 {
            net.replace_with_identity(k).unwrap();
        }
        for emb in [LabelEmbedding::HeadLogits, LabelEmbedding::PaddedFeatures] {
            let c = triangle_bound_check(
                &net,
                &batch,
                emb,
                &DistanceConfig::default(),
                &mut ChaCha8Rng::seed_from_u64(3),
            )
            .unwrap();
            assert!((c.lhs - c.rhs).abs() < 1e-9);
            assert!(c.block_terms.iter().all(|&t| t == 0.0));
            assert!(c.holds);
        }
    }

    #[test]
    fn random_nets_satisfy_the_bound() {
        for seed in 0..10 {
            let (net, batch) = setup(seed);
            for emb in [LabelEmbedding::HeadLogits, LabelEmbedding::PaddedFeatures] {
                let c = triangle_bound_check(
                    &net,
                    &batch,
                    emb,
                    &DistanceConfig::default(),
                    &mut ChaCha8Rng::seed_from_u64(seed),
                )
                .unwrap();
                assert!(c.holds, "seed {seed}: {c:?}");
            }
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ResidualNet::build(2, &[4, 5], 2, &mut rng).unwrap();
        let batch = Samples::new(Array2::zeros((4, 2)), vec![0, 1, 0, 1]).unwrap();
        let cfg = DistanceConfig::default();
        assert!(
            triangle_bound_check(&net, &batch, LabelEmbedding::HeadLogits, &cfg, &mut rng).is_err()
        );
        let narrow = ResidualNet::build(2, &[2, 2], 3, &mut rng).unwrap();
        let batch = Samples::new(Array2::zeros((3, 2)), vec![0, 1, 2]).unwrap();
        assert!(triangle_bound_check(
            &narrow,
            &batch,
            LabelEmbedding::PaddedFeatures,
            &cfg,
            &mut rng
        )
        .is_err());
    }
}
