use depthprune::compression::*;
use depthprune::harness::{generate_splits, DatasetKind, DatasetSpec};
use depthprune::net::{Affine, ResidualNet};
use depthprune::ot::{max_sliced_with_directions, PointCloud, SeedMode};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn blobs(seed: u64) -> depthprune::harness::Splits {
    generate_splits(&DatasetSpec {
        kind: DatasetKind::Blobs,
        n_samples: 300,
        noise: 0.8,
        seed,
        ..DatasetSpec::default()
    })
    .unwrap()
}

fn zero_branch(net: &mut ResidualNet, k: usize) {
    net.blocks[k].second = Affine::zeros(net.blocks[k].hidden_dim, net.blocks[k].out_dim);
}

#[test]
fn regularizer_mean_equals_independent_per_block_max_sliced() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = ResidualNet::build(2, &[6, 6, 6, 6], 2, &mut rng).unwrap();
    let data = blobs(0);
    let cfg = TrainConfig::default();
    let bank = DirectionBank::draw(&net, &cfg, &mut rng).unwrap();
    let (r, v) = regularizer_with(&net, &data.val.features, &cfg, &bank).unwrap();
    let states = net.trace(&data.val.features).unwrap();
    let dirs = bank.get(6).unwrap();
    let independent: Vec<f64> = (0..4)
        .map(|k| {
            let a = PointCloud::new(states[k].clone()).unwrap();
            let b = PointCloud::new(states[k + 1].clone()).unwrap();
            max_sliced_with_directions(&a, &b, dirs, 2.0).unwrap().0
        })
        .collect();
    let mean = independent.iter().sum::<f64>() / 4.0;
    assert!((r - mean).abs() < 1e-9);
    for (got, want) in v.values.iter().zip(&independent) {
        assert!((got.value - want).abs() < 1e-9);
    }
}

#[test]
fn block_influence_equals_brute_force_single_removals() {
    let splits = blobs(1);
    let mut net =
        ResidualNet::build(2, &[6, 6, 6, 6], 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    train(
        &mut net,
        &splits.train,
        &TrainConfig {
            epochs: 5,
            lambda: 0.0,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let ranked = score_blocks(
        &net,
        &splits.val,
        ScoreMethod::BlockInfluence,
        &TrainConfig::default(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let base = accuracy(&net, &splits.val).unwrap();
    let mut brute = Vec::new();
    for k in 0..net.blocks.len() {
        let mut probe = net.clone();
        probe.replace_with_identity(k).unwrap();
        brute.push((base - accuracy(&probe, &splits.val).unwrap(), k));
    }
    brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let got: Vec<(f64, usize)> = ranked.iter().map(|s| (s.score, s.block)).collect();
    assert_eq!(got, brute);
}

#[test]
fn compress_removes_only_eligible_blocks_once() {
    let splits = blobs(3);
    let mut net =
        ResidualNet::build(2, &[4, 6, 6, 6, 5, 5], 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    net.replace_with_identity(2).unwrap();
    let report = compress_trained(&mut net, &splits.val, 1.0, &TrainConfig::default()).unwrap();
    let eligible = [1, 4, 5];
    let mut order = report.removal_order.clone();
    order.sort_unstable();
    assert_eq!(order, eligible);
    for snap in &report.distance_snapshots {
        assert!(snap.blocks().iter().all(|b| eligible.contains(b)));
    }
}

#[test]
fn compress_without_eligible_blocks_returns_trained_net() {
    let splits = blobs(5);
    let net = ResidualNet::build(2, &[3, 4, 5], 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut only = net.clone();
    only.blocks.truncate(2);
    only.head = Affine::init(5, 2, &mut ChaCha8Rng::seed_from_u64(1));
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let (out, report) = compress(only, &splits.train, &splits.val, 1.0, 0.02, &cfg).unwrap();
    assert!(report.removal_order.is_empty());
    assert_eq!(out.eligible_active_blocks(), Vec::<usize>::new());
    assert_eq!(report.config.lambda, 1.0);
}

#[test]
fn zero_distance_removal_keeps_batch_predictions() {
    let splits = blobs(6);
    let mut net = ResidualNet::build(2, &[6, 6, 6], 2, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    zero_branch(&mut net, 1);
    let before = net.forward(&splits.val.features).unwrap();
    let acc = accuracy(&net, &splits.val).unwrap();
    let report = compress_trained(&mut net, &splits.val, 0.0, &TrainConfig::default()).unwrap();
    assert_eq!(report.removal_order[0], 1);
    assert_eq!(report.distance_snapshots[0].get(1), Some(0.0));
    assert_eq!(report.accuracy_trajectory[0], acc);
    let mut only = net.clone();
    for (k, b) in only.blocks.iter_mut().enumerate() {
        b.state = if k == 1 {
            depthprune::net::BlockState::Identity
        } else {
            depthprune::net::BlockState::Active
        };
    }
    assert_eq!(only.forward(&splits.val.features).unwrap(), before);
}

#[test]
fn heal_on_near_identity_fixture_does_not_hurt() {
    let splits = generate_splits(&DatasetSpec {
        n_samples: 600,
        ..DatasetSpec::default()
    })
    .unwrap();
    let mut net =
        ResidualNet::build(2, &[8, 8, 8, 8], 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        lambda: 0.0,
        ..TrainConfig::default()
    };
    train(&mut net, &splits.train, &cfg).unwrap();
    for k in [1, 2] {
        net.blocks[k].second.weight.mapv_inplace(|v| v * 1e-3);
        net.blocks[k].second.bias.mapv_inplace(|v| v * 1e-3);
    }
    let mut removed = remove_lowest(
        &mut net,
        &splits.val,
        ScoreMethod::Msw,
        2,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    removed.sort_unstable();
    assert_eq!(removed, vec![1, 2]);
    let states: Vec<_> = net.blocks.iter().map(|b| b.state).collect();
    let before = accuracy(&net, &splits.val).unwrap();
    heal(&mut net, &splits.train, &cfg, 15).unwrap();
    assert!(accuracy(&net, &splits.val).unwrap() >= before);
    assert_eq!(
        net.blocks.iter().map(|b| b.state).collect::<Vec<_>>(),
        states
    );
}

#[test]
fn seeded_training_runs_match_bitwise() {
    let splits = blobs(8);
    let mut cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    cfg.distance_cfg.seed_mode = SeedMode::Seeded(2);
    let run = || {
        let mut net =
            ResidualNet::build(2, &[6, 6, 6], 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (net2, report) =
            compress(net.clone(), &splits.train, &splits.val, 1.0, 0.05, &cfg).unwrap();
        net = net2;
        (net.flatten(), report.to_json().unwrap())
    };
    assert_eq!(run(), run());
}

fn vector() -> impl Strategy<Value = BlockDistanceVector> {
    prop::collection::vec(0.0f64..2.0, 0..8).prop_map(|v| {
        BlockDistanceVector::from_values(
            v.into_iter()
                .enumerate()
                .map(|(block, value)| BlockDistance { block, value })
                .collect(),
        )
    })
}

proptest! {
    #[test]
    fn epsilon_selection_is_monotone(v in vector(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = epsilon_select(&v, lo).unwrap();
        let large = epsilon_select(&v, hi).unwrap();
        prop_assert!(small.iter().all(|k| large.contains(k)));
    }
}

#[test]
fn objective_gradient_accumulates_both_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = ResidualNet::build(3, &[3, 3], 2, &mut rng).unwrap();
    let x = Array2::from_shape_fn((8, 3), |(i, j)| ((i * 3 + j) % 5) as f64 - 2.0);
    let batch = Samples::new(x, (0..8).map(|i| i % 2).collect()).unwrap();
    let cfg = TrainConfig {
        lambda: 2.5,
        ..TrainConfig::default()
    };
    let bank = DirectionBank::draw(&net, &cfg, &mut rng).unwrap();
    let terms = term_gradients_with(&net, &batch, &cfg, &bank).unwrap();
    let eval = objective_with(&net, &batch, &cfg, &bank).unwrap();
    for ((j, l), r) in eval
        .gradient
        .iter()
        .zip(&terms.grad_loss)
        .zip(&terms.grad_regularizer)
    {
        let expected = l + &(r * 2.5);
        assert!((j - &expected).iter().all(|d| d.abs() < 1e-12));
    }
}
