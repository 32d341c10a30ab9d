use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{block_distances, BlockDistanceVector};
use super::train::{accuracy, train};
use super::{Samples, TrainConfig};
use crate::net::{lipschitz_report, ResidualNet};
use crate::ot::PointCloud;
use crate::{Error, Result};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Probe pairs used for the per-block Lipschitz estimates in reports.
const LIPSCHITZ_PAIR_BUDGET: usize = 2000;

/// Offsets the training seed for the selection-time direction stream.
const SELECTION_STREAM: u64 = 0x5e1e_c7ed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    /// Ascending block distance under the configured metric.
    Msw,
    /// Ascending validation-accuracy drop when the block alone is removed.
    BlockInfluence,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBlock {
    pub block: usize,
    pub score: f64,
}

/// Eligible Active blocks ranked for removal, best candidate first.
pub fn score_blocks<R: Rng + ?Sized>(
    net: &ResidualNet,
    val: &Samples,
    method: ScoreMethod,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<ScoredBlock>> {
    let eligible = net.eligible_active_blocks();
    let mut scored: Vec<ScoredBlock> = match method {
        ScoreMethod::Msw => block_distances(net, &val.features, cfg, rng)?
            .values
            .into_iter()
            .map(|d| ScoredBlock {
                block: d.block,
                score: d.value,
            })
            .collect(),
        ScoreMethod::BlockInfluence => {
            let base = accuracy(net, val)?;
            eligible
                .par_iter()
                .map(|&k| {
                    let mut probe = net.clone();
                    probe.replace_with_identity(k)?;
                    Ok(ScoredBlock {
                        block: k,
                        score: base - accuracy(&probe, val)?,
                    })
                })
                .collect::<Result<_>>()?
        }
        ScoreMethod::Random => {
            let mut order = eligible;
            order.shuffle(rng);
            return Ok(order
                .into_iter()
                .enumerate()
                .map(|(i, block)| ScoredBlock {
                    block,
                    score: i as f64,
                })
                .collect());
        }
    };
    scored.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.block.cmp(&b.block)));
    Ok(scored)
}

/// Blocks whose distance is at most `epsilon`, in block order.
pub fn epsilon_select(distances: &BlockDistanceVector, epsilon: f64) -> Result<Vec<usize>> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be >= 0, got {epsilon}"
        )));
    }
    Ok(distances
        .values
        .iter()
        .filter(|d| d.value <= epsilon)
        .map(|d| d.block)
        .collect())
}

/// One-shot removal of the `count` best-ranked blocks. Returns them in rank order.
pub fn remove_lowest<R: Rng + ?Sized>(
    net: &mut ResidualNet,
    val: &Samples,
    method: ScoreMethod,
    count: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let ranked = score_blocks(net, val, method, cfg, rng)?;
    let chosen: Vec<usize> = ranked.iter().take(count).map(|s| s.block).collect();
    for &k in &chosen {
        net.replace_with_identity(k)?;
    }
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub format_version: u32,
    pub config: TrainConfig,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub dense_accuracy: f64,
    /// Mean block distance of the trained net before any removal.
    pub dense_mean_distance: f64,
    pub dense_cpl: usize,
    pub dense_macs: u64,
    /// Every removal performed, including a final one that was rolled back.
    pub removal_order: Vec<usize>,
    pub accuracy_trajectory: Vec<f64>,
    /// Distances that selected each removal.
    pub distance_snapshots: Vec<BlockDistanceVector>,
    /// Mean distance over the blocks still eligible after each removal.
    pub mean_distance_trajectory: Vec<f64>,
    pub cpl_trajectory: Vec<usize>,
    pub macs_trajectory: Vec<u64>,
    pub rolled_back: Option<usize>,
    pub final_accuracy: f64,
    pub final_cpl: usize,
    pub final_macs: u64,
    pub lipschitz_per_block: Vec<f64>,
    pub lipschitz_product: f64,
}

impl CompressionReport {
    fn start(net: &ResidualNet, cfg: &TrainConfig, delta: f64, dense_accuracy: f64) -> Self {
        Self {
            format_version: REPORT_FORMAT_VERSION,
            config: cfg.clone(),
            delta,
            epsilon: None,
            dense_accuracy,
            dense_mean_distance: 0.0,
            dense_cpl: net.critical_path_length(),
            dense_macs: net.macs(),
            removal_order: Vec::new(),
            accuracy_trajectory: Vec::new(),
            distance_snapshots: Vec::new(),
            mean_distance_trajectory: Vec::new(),
            cpl_trajectory: Vec::new(),
            macs_trajectory: Vec::new(),
            rolled_back: None,
            final_accuracy: dense_accuracy,
            final_cpl: net.critical_path_length(),
            final_macs: net.macs(),
            lipschitz_per_block: Vec::new(),
            lipschitz_product: 1.0,
        }
    }

    fn push(
        &mut self,
        net: &ResidualNet,
        block: usize,
        accuracy: f64,
        snapshot: BlockDistanceVector,
        after: f64,
    ) {
        self.removal_order.push(block);
        self.accuracy_trajectory.push(accuracy);
        self.distance_snapshots.push(snapshot);
        self.mean_distance_trajectory.push(after);
        self.cpl_trajectory.push(net.critical_path_length());
        self.macs_trajectory.push(net.macs());
    }

    fn finish(&mut self, net: &ResidualNet, val: &Samples) -> Result<()> {
        self.final_accuracy = accuracy(net, val)?;
        self.final_cpl = net.critical_path_length();
        self.final_macs = net.macs();
        let probe = PointCloud::new(val.features.clone())?;
        let lip = lipschitz_report(net, &probe, LIPSCHITZ_PAIR_BUDGET)?;
        self.lipschitz_per_block = lip.per_block;
        self.lipschitz_product = lip.product;
        Ok(())
    }

    /// Removals that remain in the returned net.
    pub fn kept_removals(&self) -> &[usize] {
        let n = self.removal_order.len() - usize::from(self.rolled_back.is_some());
        &self.removal_order[..n]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Greedy removal on an already trained net.
///
/// Each step recomputes the block distances on the full validation split,
/// replaces the smallest-distance block by the identity and re-measures
/// accuracy. When the drop from the dense accuracy exceeds `delta`, that
/// last removal is undone and the loop stops; the report still lists it.
pub fn compress_trained(
    net: &mut ResidualNet,
    val: &Samples,
    delta: f64,
    cfg: &TrainConfig,
) -> Result<CompressionReport> {
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!("delta must be >= 0, got {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SELECTION_STREAM);
    let dense = accuracy(net, val)?;
    let mut report = CompressionReport::start(net, cfg, delta, dense);
    let mut snapshot = block_distances(net, &val.features, cfg, &mut rng)?;
    report.dense_mean_distance = snapshot.mean;
    while let Some(k) = snapshot.argmin() {
        net.replace_with_identity(k)?;
        let acc = accuracy(net, val)?;
        let next = block_distances(net, &val.features, cfg, &mut rng)?;
        report.push(net, k, acc, snapshot, next.mean);
        if dense - acc > delta {
            net.restore_block(k)?;
            report.rolled_back = Some(k);
            break;
        }
        snapshot = next;
    }
    report.finish(net, val)?;
    Ok(report)
}

/// One-shot variant: removes every block whose validation distance is at
/// most `epsilon`, in ascending distance order, without an accuracy budget.
pub fn compress_epsilon(
    net: &mut ResidualNet,
    val: &Samples,
    epsilon: f64,
    cfg: &TrainConfig,
) -> Result<CompressionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SELECTION_STREAM);
    let dense = accuracy(net, val)?;
    let mut report = CompressionReport::start(net, cfg, 0.0, dense);
    report.epsilon = Some(epsilon);
    let snapshot = block_distances(net, &val.features, cfg, &mut rng)?;
    report.dense_mean_distance = snapshot.mean;
    let chosen = epsilon_select(&snapshot, epsilon)?;
    for entry in snapshot
        .ascending()
        .into_iter()
        .filter(|d| chosen.contains(&d.block))
    {
        net.replace_with_identity(entry.block)?;
        let acc = accuracy(net, val)?;
        let after = block_distances(net, &val.features, cfg, &mut rng)?.mean;
        report.push(net, entry.block, acc, snapshot.clone(), after);
    }
    report.finish(net, val)?;
    Ok(report)
}

/// Trains `w_init` on `train_data` with weight `lambda`, then runs
/// [`compress_trained`] against `val`.
pub fn compress(
    w_init: ResidualNet,
    train_data: &Samples,
    val: &Samples,
    lambda: f64,
    delta: f64,
    cfg: &TrainConfig,
) -> Result<(ResidualNet, CompressionReport)> {
    let cfg = TrainConfig {
        lambda,
        ..cfg.clone()
    };
    let mut net = w_init;
    train(&mut net, train_data, &cfg)?;
    let report = compress_trained(&mut net, val, delta, &cfg)?;
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::BlockDistance;
    use ndarray::Array2;

    fn fixture() -> (ResidualNet, Samples) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = ResidualNet::build(2, &[6, 6, 6, 6], 2, &mut rng).unwrap();
        for k in [1, 3] {
            net.blocks[k].second.weight.fill(0.0);
            net.blocks[k].second.bias.fill(0.0);
        }
        let x = Array2::from_shape_fn((40, 2), |(i, j)| {
            (((i * 13 + j * 5) % 17) as f64 - 8.0) / 4.0
        });
        let labels = (0..40)
            .map(|i| usize::from(x[[i, 0]] + x[[i, 1]] > 0.0))
            .collect();
        (net, Samples::new(x, labels).unwrap())
    }

    fn vector(vals: &[(usize, f64)]) -> BlockDistanceVector {
        BlockDistanceVector::from_values(
            vals.iter()
                .map(|&(block, value)| BlockDistance { block, value })
                .collect(),
        )
    }

    #[test]
    fn epsilon_threshold_semantics() {
        let v = vector(&[(0, 0.3), (2, 0.1), (5, 0.7)]);
        assert!(epsilon_select(&v, 0.0).unwrap().is_empty());
        assert_eq!(epsilon_select(&v, f64::INFINITY).unwrap(), vec![0, 2, 5]);
        assert_eq!(epsilon_select(&v, 0.5).unwrap(), vec![0, 2]);
        assert_eq!(
            epsilon_select(&vector(&[(1, 0.0), (2, 0.4)]), 0.0).unwrap(),
            vec![1]
        );
        assert!(epsilon_select(&v, -1.0).is_err());
    }

    #[test]
    fn zero_blocks_rank_first() {
        let (net, val) = fixture();
        let cfg = TrainConfig::default();
        let ranked = score_blocks(
            &net,
            &val,
            ScoreMethod::Msw,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(
            ranked[..2].iter().map(|s| s.block).collect::<Vec<_>>(),
            vec![1, 3]
        );
        assert_eq!(ranked[0].score, 0.0);
        assert!(ranked[2].score > 0.0);
        let ranked = score_blocks(
            &net,
            &val,
            ScoreMethod::BlockInfluence,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for s in ranked.iter().filter(|s| s.block == 1 || s.block == 3) {
            assert_eq!(s.score, 0.0);
        }
        let scores: Vec<f64> = ranked.iter().map(|s| s.score).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn random_ranking_is_reproducible() {
        let (net, val) = fixture();
        let cfg = TrainConfig::default();
        let a = score_blocks(
            &net,
            &val,
            ScoreMethod::Random,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        let b = score_blocks(
            &net,
            &val,
            ScoreMethod::Random,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn compress_removes_zero_blocks_first_and_respects_budget() {
        let (mut net, val) = fixture();
        let report = compress_trained(&mut net, &val, 0.0, &TrainConfig::default()).unwrap();
        assert_eq!(&report.removal_order[..2], &[1, 3]);
        assert_eq!(report.accuracy_trajectory[..2], [report.dense_accuracy; 2]);
        assert!(report.dense_accuracy - report.final_accuracy <= 0.0);
        let n = report.removal_order.len();
        assert_eq!(report.accuracy_trajectory.len(), n);
        assert_eq!(report.cpl_trajectory.len(), n);
        assert_eq!(report.macs_trajectory.len(), n);
        assert_eq!(report.distance_snapshots.len(), n);
        assert_eq!(report.mean_distance_trajectory.len(), n);
        for k in report.kept_removals() {
            assert!(!net.blocks[*k].is_active());
        }
        if let Some(k) = report.rolled_back {
            assert!(net.blocks[k].is_active());
        }
    }

    #[test]
    fn unlimited_budget_removes_everything_once() {
        let (mut net, val) = fixture();
        let report = compress_trained(&mut net, &val, 1.0, &TrainConfig::default()).unwrap();
        let mut order = report.removal_order.clone();
        order.sort_unstable();
        assert_eq!(order, vec![0, 1, 2, 3]);
        assert!(net.eligible_active_blocks().is_empty());
        assert_eq!(report.final_cpl, 2);
    }

    #[test]
    fn report_json_round_trips() {
        let (mut net, val) = fixture();
        let report = compress_trained(&mut net, &val, 0.05, &TrainConfig::default()).unwrap();
        let back = CompressionReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn epsilon_variant_removes_exact_zero_blocks() {
        let (mut net, val) = fixture();
        let report = compress_epsilon(&mut net, &val, 0.0, &TrainConfig::default()).unwrap();
        assert_eq!(report.removal_order, vec![1, 3]);
        assert_eq!(report.epsilon, Some(0.0));
    }
}
