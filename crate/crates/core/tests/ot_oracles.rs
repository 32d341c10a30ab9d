use depthprune::ot::*;
use itertools::Itertools;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, d: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(-3.0f64..3.0, n * d)
        .prop_map(move |v| PointCloud::new(Array2::from_shape_vec((n, d), v).unwrap()).unwrap())
}

fn triple() -> impl Strategy<Value = (PointCloud, PointCloud, PointCloud)> {
    (1usize..7, 1usize..5).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d), cloud(n, d)))
}

fn pair_small() -> impl Strategy<Value = (PointCloud, PointCloud)> {
    (1usize..7, 1usize..5).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d)))
}

/// Independent assignment oracle: all bijections via itertools.
fn brute_force(mu: &PointCloud, nu: &PointCloud, p: f64) -> f64 {
    let (x, y) = (mu.samples(), nu.samples());
    let n = mu.len();
    let best = (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| {
                    x.row(i)
                        .iter()
                        .zip(y.row(j).iter())
                        .map(|(a, b)| (a - b).abs().powf(p))
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    (best / n as f64).powf(1.0 / p)
}

fn shared(d: usize, n: usize, seed: u64) -> Vec<Direction> {
    sample_unit_directions(d, n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn msw(a: &PointCloud, b: &PointCloud, dirs: &[Direction]) -> f64 {
    max_sliced_with_directions(a, b, dirs, 2.0).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exact_solver_matches_independent_enumeration((mu, nu) in pair_small(), p in prop::sample::select(vec![1.0, 2.0, 3.0])) {
        let a = exact_wasserstein_small(&mu, &nu, p).unwrap();
        let b = brute_force(&mu, &nu, p);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b), "{a} vs {b}");
    }

    #[test]
    fn one_dimensional_sorted_matching_is_optimal((mu, nu) in pair_small(), seed in 0u64..1000) {
        let dir = &shared(mu.dim(), 1, seed)[0];
        let pa = project(&mu, dir).unwrap();
        let pb = project(&nu, dir).unwrap();
        let sorted = wasserstein_1d(&pa.values, &pb.values, 2.0).unwrap();
        let col = |v: &[f64]| PointCloud::new(Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()).unwrap();
        let oracle = brute_force(&col(&pa.values), &col(&pb.values), 2.0);
        prop_assert!((sorted - oracle).abs() <= 1e-9, "{sorted} vs {oracle}");
    }

    #[test]
    fn shared_direction_max_sliced_is_a_pseudometric((a, b, c) in triple(), seed in 0u64..1000) {
        let dirs = shared(a.dim(), 64, seed);
        let (ab, ba, bc, ac) = (msw(&a, &b, &dirs), msw(&b, &a, &dirs), msw(&b, &c, &dirs), msw(&a, &c, &dirs));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ac <= ab + bc + 1e-6);
        prop_assert_eq!(msw(&a, &a, &dirs), 0.0);
    }

    #[test]
    fn sliced_max_exact_ordering((a, b) in pair_small(), seed in 0u64..1000) {
        let dirs = shared(a.dim(), 64, seed);
        let s = sliced_with_directions(&a, &b, &dirs, 2.0).unwrap();
        let m = msw(&a, &b, &dirs);
        let e = exact_wasserstein_small(&a, &b, 2.0).unwrap();
        prop_assert!(s <= m + 1e-12, "sliced {s} > max {m}");
        prop_assert!(m <= e + 1e-9, "max {m} > exact {e}");
    }

    #[test]
    fn nested_direction_sets_never_lower_the_max((a, b) in pair_small(), seed in 0u64..1000, k in 1usize..32) {
        let dirs = shared(a.dim(), 64, seed);
        prop_assert!(msw(&a, &b, &dirs[..k]) <= msw(&a, &b, &dirs));
    }

    #[test]
    fn common_translation_leaves_distances_unchanged((a, b) in pair_small(), shift in prop::collection::vec(-5.0f64..5.0, 4)) {
        let t = &shift[..a.dim()];
        let (at, bt) = (a.translated(t).unwrap(), b.translated(t).unwrap());
        let dirs = shared(a.dim(), 16, 7);
        prop_assert!((msw(&a, &b, &dirs) - msw(&at, &bt, &dirs)).abs() <= 1e-9);
        let e = exact_wasserstein_small(&a, &b, 2.0).unwrap();
        prop_assert!((e - exact_wasserstein_small(&at, &bt, 2.0).unwrap()).abs() <= 1e-9);
        prop_assert!((mean_lp(&a, &b, Norm::L2).unwrap() - mean_lp(&at, &bt, Norm::L2).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn shifting_one_cloud_moves_max_sliced_by_at_most_the_shift((a, _b) in pair_small(), shift in prop::collection::vec(-5.0f64..5.0, 4)) {
        let t = &shift[..a.dim()];
        let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dirs = shared(a.dim(), 32, 3);
        prop_assert!(msw(&a, &a.translated(t).unwrap(), &dirs) <= norm + 1e-9);
    }

    #[test]
    fn alternative_metrics_vanish_on_identical_clouds((a, _b) in pair_small()) {
        prop_assert_eq!(mean_lp(&a, &a, Norm::L1).unwrap(), 0.0);
        prop_assert!(mmd_rbf(&a, &a, Bandwidth::MedianHeuristic).unwrap() <= 1e-7);
        if a.len() >= 2 {
            prop_assert!(kl_diag_gaussian(&a, &a).unwrap().abs() <= 1e-12);
        }
    }
}

#[test]
fn point_mass_values() {
    let mu = PointCloud::from_rows(&[vec![0.0, 0.0]]).unwrap();
    let nu = PointCloud::from_rows(&[vec![3.0, 4.0]]).unwrap();
    assert!((exact_wasserstein_small(&mu, &nu, 2.0).unwrap() - 5.0).abs() < 1e-12);
    let cfg = DistanceConfig {
        max_mode: MaxMode::ProjectedAscent,
        seed_mode: SeedMode::Seeded(0),
        ..DistanceConfig::default()
    };
    let m = max_sliced_wasserstein(&mu, &nu, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((m.value - 5.0).abs() < 1e-3);
    // E[(θ·v)²] over the sphere in 2-D is ‖v‖²/2.
    let cfg = DistanceConfig {
        n_proj: 100_000,
        seed_mode: SeedMode::Seeded(5),
        ..DistanceConfig::default()
    };
    let s = sliced_wasserstein(&mu, &nu, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((s - 5.0 / 2f64.sqrt()).abs() < 2e-2, "{s}");
}
