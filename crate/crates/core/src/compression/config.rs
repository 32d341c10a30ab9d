use serde::{Deserialize, Serialize};

use crate::ot::{Bandwidth, DistanceConfig};
use crate::{Error, Result};

/// Which discrepancy the regularizer and the block scores use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    MaxSliced,
    Sliced,
    MeanL1,
    MeanL2,
    Mmd,
    KlDiagGaussian,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 6] = [
        DistanceKind::MaxSliced,
        DistanceKind::Sliced,
        DistanceKind::MeanL1,
        DistanceKind::MeanL2,
        DistanceKind::Mmd,
        DistanceKind::KlDiagGaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceKind::MaxSliced => "max_sliced",
            DistanceKind::Sliced => "sliced",
            DistanceKind::MeanL1 => "mean_l1",
            DistanceKind::MeanL2 => "mean_l2",
            DistanceKind::Mmd => "mmd",
            DistanceKind::KlDiagGaussian => "kl_diag_gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown distance '{s}'")))
    }

    pub fn uses_directions(self) -> bool {
        matches!(self, DistanceKind::MaxSliced | DistanceKind::Sliced)
    }
}

/// When projection directions are redrawn during training (Unseeded mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionRefresh {
    PerBatch,
    PerEpoch,
}

/// Learning-rate schedule over all optimizer steps of one training call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr · ½(1 + cos(π t / T))` at step `t` of `T`.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub distance: DistanceKind,
    pub distance_cfg: DistanceConfig,
    pub mmd_bandwidth: Bandwidth,
    pub direction_refresh: DirectionRefresh,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            distance: DistanceKind::MaxSliced,
            distance_cfg: DistanceConfig::default(),
            mmd_bandwidth: Bandwidth::MedianHeuristic,
            direction_refresh: DirectionRefresh::PerBatch,
            epochs: 60,
            batch_size: 64,
            learning_rate: 0.05,
            schedule: LrSchedule::Cosine,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        self.distance_cfg
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}
