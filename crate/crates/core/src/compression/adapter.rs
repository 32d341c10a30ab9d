use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LrSchedule;
use crate::autodiff::{self, Tape};
use crate::net::ResidualNet;
use crate::ot::{max_sliced_wasserstein, DistanceConfig, MaxMode, PointCloud, SeedMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterFitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    /// Direction search used both for training steps and the final measurement.
    pub distance: DistanceConfig,
    pub seed: u64,
}

impl Default for AdapterFitConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 128,
            learning_rate: 0.05,
            schedule: LrSchedule::Cosine,
            momentum: 0.9,
            distance: DistanceConfig {
                n_proj: 64,
                max_mode: MaxMode::ProjectedAscent,
                ..DistanceConfig::default()
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterFit {
    /// Max-sliced distance between adapter and original outputs on all inputs.
    pub distance: f64,
    /// Same distance measured before training.
    pub initial_distance: f64,
}

/// Trains the affine adapter of width-changing block `k` so that its
/// outputs match the distribution of the original block outputs under
/// max-sliced `W_p`. Only the adapter weights move; the adapter is
/// attached first when missing. The block stays Active until committed.
pub fn fit_adapter(
    net: &mut ResidualNet,
    k: usize,
    inputs: &Array2<f64>,
    cfg: &AdapterFitConfig,
) -> Result<AdapterFit> {
    if k >= net.blocks.len() {
        return Err(Error::invalid(format!("block {k} out of range")));
    }
    if cfg.batch_size < 2 || cfg.epochs == 0 {
        return Err(Error::Config(
            "adapter fit needs batch_size >= 2 and epochs >= 1".into(),
        ));
    }
    cfg.distance.validate()?;
    if !net.blocks[k].is_active() {
        return Err(Error::invalid(format!("block {k} is not active")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if net.blocks[k].adapter.is_none() {
        net.attach_adapter(k, &mut rng)?;
    }
    let states = net.trace(inputs)?;
    let (source, target) = (&states[k], &states[k + 1]);
    let distance = |net: &ResidualNet, rng: &mut ChaCha8Rng| -> Result<f64> {
        let adapter = net.blocks[k].adapter.as_ref().expect("attached");
        let out = PointCloud::new(adapter.apply(source)?)?;
        let measure = DistanceConfig {
            seed_mode: SeedMode::Unseeded,
            ..cfg.distance.clone()
        };
        Ok(max_sliced_wasserstein(&out, &PointCloud::new(target.clone())?, &measure, rng)?.value)
    };
    let initial_distance = distance(net, &mut rng)?;

    let mut velocity = [None::<Array2<f64>>, None];
    let mut order: Vec<usize> = (0..source.nrows()).collect();
    let per_epoch = order
        .chunks(cfg.batch_size)
        .filter(|r| r.len() >= 2)
        .count();
    let total = per_epoch * cfg.epochs;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.batch_size).filter(|r| r.len() >= 2) {
            let xb = source.select(Axis(0), rows);
            let yb = target.select(Axis(0), rows);
            let adapter = net.blocks[k].adapter.as_mut().expect("attached");
            let out = PointCloud::new(adapter.apply(&xb)?)?;
            let goal = PointCloud::new(yb.clone())?;
            let best = max_sliced_wasserstein(&out, &goal, &cfg.distance, &mut rng)?;
            let lr = cfg.schedule.rate(cfg.learning_rate, step, total);
            step += 1;
            if best.value == 0.0 {
                continue;
            }
            let mut tape = Tape::new();
            let w = tape.leaf(adapter.weight.clone());
            let b = tape.leaf(adapter.bias.clone());
            let x = tape.leaf(xb);
            let y = tape.leaf(yb);
            let pred = autodiff::affine(&mut tape, x, w, b)?;
            let loss = autodiff::msw_loss(&mut tape, pred, y, &[best.direction], cfg.distance.p)?;
            let grads = tape.backward(loss.value)?;
            for (slot, (param, var)) in velocity
                .iter_mut()
                .zip([(&mut adapter.weight, w), (&mut adapter.bias, b)])
            {
                let g = grads.wrt(var);
                let v = slot.get_or_insert_with(|| Array2::zeros(g.raw_dim()));
                v.zip_mut_with(g, |v, &g| *v = cfg.momentum * *v + g);
                param.scaled_add(-lr, v);
            }
        }
    }
    if net.blocks[k]
        .adapter
        .as_ref()
        .expect("attached")
        .weight
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("adapter weights diverged".into()));
    }
    Ok(AdapterFit {
        distance: distance(net, &mut rng)?,
        initial_distance,
    })
}
