use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{record_objective, DirectionBank};
use super::{DirectionRefresh, Samples, TrainConfig};
use crate::net::ResidualNet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Minibatch means of the classification loss, the regularizer and `J`.
    pub loss: f64,
    pub regularizer: f64,
    pub objective: f64,
    /// Training accuracy after the epoch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Fraction of rows whose largest logit (first on ties) is the label.
pub fn accuracy(net: &ResidualNet, data: &Samples) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let logits = net.forward(&data.features)?;
    let hits = logits
        .rows()
        .into_iter()
        .zip(&data.labels)
        .filter(|(row, &label)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count();
    Ok(hits as f64 / data.len() as f64)
}

fn max_abs(arrays: &[&Array2<f64>]) -> f64 {
    arrays.iter().flat_map(|a| a.iter()).fold(0.0_f64, |m, v| {
        if v.is_finite() {
            m.max(v.abs())
        } else {
            f64::INFINITY
        }
    })
}

/// Minibatch SGD with momentum on `J = L + λR`, with the step size following `cfg.schedule`.
///
/// Each epoch shuffles the rows with a generator seeded from `cfg.seed`;
/// a trailing batch smaller than two rows is dropped. Unseeded directions
/// come from the same generator, so a run is reproducible from its seed.
pub fn train(net: &mut ResidualNet, data: &Samples, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::invalid("training needs at least two samples"));
    }
    data.check_labels(net.num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Array2<f64>> = net
        .parameters()
        .iter()
        .map(|p| Array2::zeros(p.raw_dim()))
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    let mut bank = DirectionBank::empty();
    let per_epoch = order
        .chunks(cfg.batch_size)
        .filter(|c| c.len() >= 2)
        .count();
    let total_steps = per_epoch * cfg.epochs;
    let mut global_step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        if cfg.direction_refresh == DirectionRefresh::PerEpoch {
            bank = DirectionBank::draw(net, cfg, &mut rng)?;
        }
        let (mut sum_l, mut sum_r, mut sum_j, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (step, rows) in order.chunks(cfg.batch_size).enumerate() {
            if rows.len() < 2 {
                continue;
            }
            if cfg.direction_refresh == DirectionRefresh::PerBatch {
                bank = DirectionBank::draw(net, cfg, &mut rng)?;
            }
            let batch = data.select(rows);
            let rec = record_objective(net, &batch, cfg, &bank)?;
            let (l, r) = (rec.tape.scalar_value(rec.loss), rec.reg_value());
            let j = rec.tape.scalar_value(rec.objective);
            let grads = rec.gradients(rec.objective)?;
            let grad_ok = grads.iter().all(|g| g.iter().all(|v| v.is_finite()));
            if !j.is_finite() || !grad_ok {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    state: format!(
                        "loss={l}, regularizer={r}, objective={j}, finite_gradient={grad_ok}, max|w|={}, distances={:?}",
                        max_abs(&net.parameters()),
                        rec.distances.values
                    ),
                });
            }
            let lr = cfg
                .schedule
                .rate(cfg.learning_rate, global_step, total_steps);
            for ((p, v), g) in net
                .parameters_mut()
                .into_iter()
                .zip(velocity.iter_mut())
                .zip(&grads)
            {
                v.zip_mut_with(g, |v, &g| *v = cfg.momentum * *v + g);
                p.scaled_add(-lr, v);
            }
            global_step += 1;
            sum_l += l;
            sum_r += r;
            sum_j += j;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        log.epochs.push(EpochRecord {
            epoch,
            loss: sum_l / n,
            regularizer: sum_r / n,
            objective: sum_j / n,
            accuracy: accuracy(net, data)?,
        });
    }
    Ok(log)
}

/// Fine-tunes the live weights on the plain loss (`λ = 0`) for `epochs`.
/// Block states are left untouched.
pub fn heal(
    net: &mut ResidualNet,
    data: &Samples,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainLog> {
    let cfg = TrainConfig {
        lambda: 0.0,
        epochs,
        ..cfg.clone()
    };
    train(net, data, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::BlockState;
    use crate::ot::SeedMode;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut x = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -1.5 } else { 1.5 };
            x[[i, 0]] = centre + noise.sample(&mut rng);
            x[[i, 1]] = centre + noise.sample(&mut rng);
            labels.push(c);
        }
        Samples::new(x, labels).unwrap()
    }

    fn net(seed: u64) -> ResidualNet {
        ResidualNet::build(2, &[8, 8, 8, 8], 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let data = blobs(200, 1);
        let mut n = net(0);
        let cfg = TrainConfig {
            lambda: 0.0,
            epochs: 20,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let log = train(&mut n, &data, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 20);
        assert!(accuracy(&n, &data).unwrap() >= 0.99);
    }

    #[test]
    fn seeded_training_is_bitwise_reproducible() {
        let data = blobs(64, 2);
        let mut cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..TrainConfig::default()
        };
        cfg.distance_cfg.seed_mode = SeedMode::Seeded(9);
        let (mut a, mut b) = (net(4), net(4));
        train(&mut a, &data, &cfg).unwrap();
        train(&mut b, &data, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn heavy_lambda_lowers_distances() {
        let data = blobs(128, 3);
        let base = TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut plain = net(5);
        let mut heavy = net(5);
        let l0 = train(
            &mut plain,
            &data,
            &TrainConfig {
                lambda: 0.0,
                ..base.clone()
            },
        )
        .unwrap();
        let l1 = train(
            &mut heavy,
            &data,
            &TrainConfig {
                lambda: 10.0,
                ..base
            },
        )
        .unwrap();
        assert!(l1.last().unwrap().regularizer < l0.last().unwrap().regularizer);
    }

    #[test]
    fn heal_keeps_states() {
        let data = blobs(64, 4);
        let mut n = net(6);
        n.replace_with_identity(1).unwrap();
        heal(
            &mut n,
            &data,
            &TrainConfig {
                epochs: 1,
                batch_size: 16,
                ..TrainConfig::default()
            },
            2,
        )
        .unwrap();
        assert_eq!(n.blocks[1].state, BlockState::Identity);
        assert_eq!(n.blocks[0].state, BlockState::Active);
    }

    #[test]
    fn divergence_is_reported() {
        let data = blobs(64, 5);
        let mut n = net(7);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e6,
            schedule: crate::compression::LrSchedule::Constant,
            ..TrainConfig::default()
        };
        match train(&mut n, &data, &cfg) {
            Err(Error::Diverged { state, .. }) => assert!(state.contains("loss=")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_labels() {
        let mut data = blobs(8, 6);
        data.labels[0] = 5;
        assert!(train(&mut net(0), &data, &TrainConfig::default()).is_err());
    }
}
