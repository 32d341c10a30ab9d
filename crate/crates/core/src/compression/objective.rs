use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DistanceKind, Samples, TrainConfig};
use crate::autodiff::{self, Tape, Var};
use crate::net::{BoundParams, ResidualNet};
use crate::ot::{self, Direction, MaxMode, MaxSliced, Norm, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockDistance {
    pub block: usize,
    pub value: f64,
}

/// Per-block distances `R̂_k` over the eligible Active blocks, in block order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockDistanceVector {
    pub values: Vec<BlockDistance>,
    pub mean: f64,
}

impl BlockDistanceVector {
    pub fn from_values(values: Vec<BlockDistance>) -> Self {
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().map(|v| v.value).sum::<f64>() / values.len() as f64
        };
        Self { values, mean }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, block: usize) -> Option<f64> {
        self.values
            .iter()
            .find(|v| v.block == block)
            .map(|v| v.value)
    }

    pub fn blocks(&self) -> Vec<usize> {
        self.values.iter().map(|v| v.block).collect()
    }

    /// Block with the smallest distance; ties go to the lowest block id.
    pub fn argmin(&self) -> Option<usize> {
        self.ascending().first().map(|b| b.block)
    }

    /// Entries sorted by ascending distance, ties by block id.
    pub fn ascending(&self) -> Vec<BlockDistance> {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.block.cmp(&b.block)));
        v
    }
}

/// Projection directions for one evaluation, one set per feature width.
/// Blocks of equal width share a set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DirectionBank {
    sets: BTreeMap<usize, Vec<Direction>>,
}

impl DirectionBank {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dim: usize, directions: Vec<Direction>) -> Result<()> {
        if directions.is_empty() {
            return Err(Error::invalid("direction set is empty"));
        }
        if let Some(d) = directions.iter().find(|d| d.dim() != dim) {
            return Err(Error::shape(format!(
                "{}-dimensional direction in a {dim}-dimensional set",
                d.dim()
            )));
        }
        self.sets.insert(dim, directions);
        Ok(())
    }

    pub fn get(&self, dim: usize) -> Result<&[Direction]> {
        self.sets
            .get(&dim)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("no direction set for width {dim}")))
    }

    /// Draws directions for every eligible block width of `net`, in
    /// ascending width order. Empty when the distance needs no directions.
    pub fn draw<R: Rng + ?Sized>(
        net: &ResidualNet,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut bank = Self::empty();
        if !cfg.distance.uses_directions() {
            return Ok(bank);
        }
        let mut dims: Vec<usize> = net
            .eligible_active_blocks()
            .into_iter()
            .map(|k| net.blocks[k].out_dim)
            .collect();
        dims.sort_unstable();
        dims.dedup();
        for d in dims {
            bank.insert(d, cfg.distance_cfg.directions(d, rng)?)?;
        }
        Ok(bank)
    }
}

fn cloud(x: &Array2<f64>) -> Result<PointCloud> {
    PointCloud::new(x.clone())
}

/// Best direction over the bank, refined by ascent when configured.
fn max_direction(
    mu: &PointCloud,
    nu: &PointCloud,
    dirs: &[Direction],
    cfg: &TrainConfig,
) -> Result<MaxSliced> {
    let dc = &cfg.distance_cfg;
    let (value, idx) = ot::max_sliced_with_directions(mu, nu, dirs, dc.p)?;
    let start = MaxSliced {
        value,
        direction: dirs[idx].clone(),
    };
    match dc.max_mode {
        MaxMode::RandomSearch => Ok(start),
        MaxMode::ProjectedAscent => ot::max_sliced_projected_ascent(
            mu,
            nu,
            start,
            dc.p,
            dc.ascent_iterations,
            dc.ascent_step,
        ),
    }
}

fn plain_distance(
    input: &Array2<f64>,
    output: &Array2<f64>,
    cfg: &TrainConfig,
    bank: &DirectionBank,
) -> Result<f64> {
    let (mu, nu) = (cloud(input)?, cloud(output)?);
    let p = cfg.distance_cfg.p;
    match cfg.distance {
        DistanceKind::MaxSliced => Ok(max_direction(&mu, &nu, bank.get(mu.dim())?, cfg)?.value),
        DistanceKind::Sliced => ot::sliced_with_directions(&mu, &nu, bank.get(mu.dim())?, p),
        DistanceKind::MeanL1 => ot::mean_lp(&mu, &nu, Norm::L1),
        DistanceKind::MeanL2 => ot::mean_lp(&mu, &nu, Norm::L2),
        DistanceKind::Mmd => ot::mmd_rbf(&mu, &nu, cfg.mmd_bandwidth),
        DistanceKind::KlDiagGaussian => ot::kl_diag_gaussian(&mu, &nu),
    }
}

fn tape_distance(
    tape: &mut Tape,
    input: Var,
    output: Var,
    cfg: &TrainConfig,
    bank: &DirectionBank,
) -> Result<Var> {
    let p = cfg.distance_cfg.p;
    match cfg.distance {
        DistanceKind::MaxSliced => {
            let dirs = bank.get(tape.value(input).ncols())?;
            match cfg.distance_cfg.max_mode {
                MaxMode::RandomSearch => {
                    Ok(autodiff::msw_loss(tape, input, output, dirs, p)?.value)
                }
                MaxMode::ProjectedAscent => {
                    let (mu, nu) = (cloud(tape.value(input))?, cloud(tape.value(output))?);
                    let best = max_direction(&mu, &nu, dirs, cfg)?;
                    Ok(autodiff::msw_loss(tape, input, output, &[best.direction], p)?.value)
                }
            }
        }
        DistanceKind::Sliced => {
            let dirs = bank.get(tape.value(input).ncols())?;
            autodiff::sliced_loss(tape, input, output, dirs, p)
        }
        DistanceKind::MeanL1 => autodiff::mean_lp_loss(tape, input, output, Norm::L1),
        DistanceKind::MeanL2 => autodiff::mean_lp_loss(tape, input, output, Norm::L2),
        DistanceKind::Mmd => {
            let sigma = cfg
                .mmd_bandwidth
                .resolve(&cloud(tape.value(input))?, &cloud(tape.value(output))?)?;
            autodiff::mmd_rbf_loss(tape, input, output, sigma)
        }
        DistanceKind::KlDiagGaussian => autodiff::kl_diag_gaussian_loss(tape, input, output),
    }
}

/// Per-block distances between block inputs and outputs when `net` is fed `x`.
pub fn block_distances_with(
    net: &ResidualNet,
    x: &Array2<f64>,
    cfg: &TrainConfig,
    bank: &DirectionBank,
) -> Result<BlockDistanceVector> {
    let collected = net.forward_collect(x)?;
    let mut values = Vec::with_capacity(collected.pairs.len());
    for pair in &collected.pairs {
        values.push(BlockDistance {
            block: pair.block,
            value: plain_distance(&pair.input, &pair.output, cfg, bank)?,
        });
    }
    Ok(BlockDistanceVector::from_values(values))
}

/// [`block_distances_with`] using a fresh bank drawn from `rng`.
pub fn block_distances<R: Rng + ?Sized>(
    net: &ResidualNet,
    x: &Array2<f64>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BlockDistanceVector> {
    let bank = DirectionBank::draw(net, cfg, rng)?;
    block_distances_with(net, x, cfg, &bank)
}

pub(crate) struct Recording {
    pub tape: Tape,
    pub params: BoundParams,
    pub loss: Var,
    pub reg: Option<Var>,
    pub objective: Var,
    pub distances: BlockDistanceVector,
}

impl Recording {
    pub fn reg_value(&self) -> f64 {
        self.reg.map_or(0.0, |r| self.tape.scalar_value(r))
    }

    pub fn gradients(&self, out: Var) -> Result<Vec<Array2<f64>>> {
        let g = self.tape.backward(out)?;
        Ok(self.params.vars.iter().map(|&v| g.wrt(v).clone()).collect())
    }
}

/// Records `L`, `R` and `J = L + λR` for one minibatch on a fresh tape.
pub(crate) fn record_objective(
    net: &ResidualNet,
    batch: &Samples,
    cfg: &TrainConfig,
    bank: &DirectionBank,
) -> Result<Recording> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    batch.check_labels(net.num_classes)?;
    let mut tape = Tape::new();
    let params = net.bind(&mut tape);
    let x = tape.leaf(batch.features.clone());
    let rec = net.record(&mut tape, x, &params)?;
    let loss = autodiff::softmax_cross_entropy(&mut tape, rec.logits, &batch.labels)?;
    let mut values = Vec::with_capacity(rec.pairs.len());
    let mut total: Option<Var> = None;
    for pair in &rec.pairs {
        let d = tape_distance(&mut tape, pair.input, pair.output, cfg, bank)?;
        values.push(BlockDistance {
            block: pair.block,
            value: tape.scalar_value(d),
        });
        total = Some(match total {
            None => d,
            Some(t) => tape.add(t, d)?,
        });
    }
    let reg = total.map(|t| tape.scale(t, 1.0 / rec.pairs.len() as f64));
    let objective = match reg {
        Some(r) if cfg.lambda > 0.0 => {
            let weighted = tape.scale(r, cfg.lambda);
            tape.add(loss, weighted)?
        }
        _ => loss,
    };
    Ok(Recording {
        tape,
        params,
        loss,
        reg,
        objective,
        distances: BlockDistanceVector::from_values(values),
    })
}

/// `R` over the eligible Active blocks for the rows of `x`, with explicit directions.
pub fn regularizer_with(
    net: &ResidualNet,
    x: &Array2<f64>,
    cfg: &TrainConfig,
    bank: &DirectionBank,
) -> Result<(f64, BlockDistanceVector)> {
    let v = block_distances_with(net, x, cfg, bank)?;
    Ok((v.mean, v))
}

/// `R = (1/K) Σ_k dist(inputs_k, outputs_k)` over the `K` eligible Active
/// blocks; zero with an empty vector when `K = 0`.
pub fn regularizer<R: Rng + ?Sized>(
    net: &ResidualNet,
    x: &Array2<f64>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, BlockDistanceVector)> {
    let bank = DirectionBank::draw(net, cfg, rng)?;
    regularizer_with(net, x, cfg, &bank)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub objective: f64,
    pub loss: f64,
    pub regularizer: f64,
    pub distances: BlockDistanceVector,
    /// `∂J/∂w` per parameter array, in [`ResidualNet::parameters`] order.
    pub gradient: Vec<Array2<f64>>,
    /// Fingerprint of the discrete choices (sort orders, argmax, ReLU masks).
    pub signature: u64,
}

/// `J = L + λR` and its gradient for one minibatch.
pub fn objective_with(
    net: &ResidualNet,
    batch: &Samples,
    cfg: &TrainConfig,
    bank: &DirectionBank,
) -> Result<ObjectiveEval> {
    let rec = record_objective(net, batch, cfg, bank)?;
    Ok(ObjectiveEval {
        objective: rec.tape.scalar_value(rec.objective),
        loss: rec.tape.scalar_value(rec.loss),
        regularizer: rec.reg_value(),
        gradient: rec.gradients(rec.objective)?,
        signature: rec.tape.signature(),
        distances: rec.distances,
    })
}

pub fn objective<R: Rng + ?Sized>(
    net: &ResidualNet,
    batch: &Samples,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ObjectiveEval> {
    let bank = DirectionBank::draw(net, cfg, rng)?;
    objective_with(net, batch, cfg, &bank)
}

/// Separate gradients of the two terms of `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGradients {
    pub loss: f64,
    pub regularizer: f64,
    pub grad_loss: Vec<Array2<f64>>,
    /// All zeros when no block is eligible.
    pub grad_regularizer: Vec<Array2<f64>>,
    pub signature: u64,
}

pub fn term_gradients_with(
    net: &ResidualNet,
    batch: &Samples,
    cfg: &TrainConfig,
    bank: &DirectionBank,
) -> Result<TermGradients> {
    let rec = record_objective(net, batch, cfg, bank)?;
    let grad_loss = rec.gradients(rec.loss)?;
    let grad_regularizer = match rec.reg {
        Some(r) => rec.gradients(r)?,
        None => grad_loss
            .iter()
            .map(|g| Array2::zeros(g.raw_dim()))
            .collect(),
    };
    Ok(TermGradients {
        loss: rec.tape.scalar_value(rec.loss),
        regularizer: rec.reg_value(),
        grad_loss,
        grad_regularizer,
        signature: rec.tape.signature(),
    })
}
