use ctrl::analysis::{silhouette, wasserstein1, DiscreteDistribution, GroundMetric};
use ctrl::clustering::{normalize_rows_in_place, sinkhorn, soft_assign};
use ctrl::diffcore::Tensor;
use ctrl::encoder::{sample_keypoints, ViewMode};
use ctrl::envs::{generate_level, GridLevel};
use ctrl::rl::{compute_gae, normalize_advantages};
use ctrl::runner::{EnvKind, ExperimentConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|raw| {
        let s: f64 = raw.iter().sum();
        if s == 0.0 {
            let mut v = vec![0.0; raw.len()];
            v[0] = 1.0;
            v
        } else {
            raw.iter().map(|x| x / s).collect()
        }
    })
}

fn line_metric(points: &[f64]) -> GroundMetric {
    let n = points.len();
    let d = (0..n * n)
        .map(|k| (points[k / n] - points[k % n]).abs())
        .collect();
    GroundMetric::new(&Tensor::new(vec![n, n], d).unwrap()).unwrap()
}

fn w1(p: &[f64], q: &[f64], d: &GroundMetric) -> f64 {
    wasserstein1(
        &DiscreteDistribution::new(p.to_vec()).unwrap(),
        &DiscreteDistribution::new(q.to_vec()).unwrap(),
        d,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn sinkhorn_rows_sum_to_one(q in (1usize..24, 1usize..10).prop_flat_map(|(b, c)| matrix(b, c, 1e-3, 1.0)), iters in 1usize..8) {
        let out = sinkhorn(&q, iters).unwrap();
        for i in 0..out.rows() {
            prop_assert!((out.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(out.row(i).iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn soft_assignment_rows_are_distributions(
        v in matrix(7, 5, -2.0, 2.0),
        e in matrix(4, 5, -1.0, 1.0),
        beta in 0.05f64..2.0,
    ) {
        let mut e = e;
        prop_assume!((0..4).all(|k| e.row(k).iter().map(|x| x * x).sum::<f64>() > 1e-6));
        normalize_rows_in_place(&mut e);
        let q = soft_assign(&v, &e, beta).unwrap();
        for i in 0..7 {
            prop_assert!((q.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(q.row(i).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn wasserstein_is_symmetric_and_satisfies_the_triangle_inequality(
        (pts, a, b, c) in (2usize..7).prop_flat_map(|n| (
            prop::collection::vec(-3.0f64..3.0, n),
            distribution(n),
            distribution(n),
            distribution(n),
        )),
    ) {
        let d = line_metric(&pts);
        prop_assert!((w1(&a, &b, &d) - w1(&b, &a, &d)).abs() < 1e-9);
        prop_assert!(w1(&a, &c, &d) <= w1(&a, &b, &d) + w1(&b, &c, &d) + 1e-9);
        prop_assert!(w1(&a, &a, &d).abs() < 1e-12);
    }

    #[test]
    fn silhouette_ignores_point_order_and_label_names(
        points in matrix(12, 3, -5.0, 5.0),
        labels in prop::collection::vec(0usize..3, 12),
        seed in any::<u64>(),
    ) {
        prop_assume!(labels.iter().any(|&l| l != labels[0]));
        let base = silhouette(&points, &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&base));

        let mut order: Vec<usize> = (0..12).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = Tensor::new(vec![12, 3], order.iter().flat_map(|&i| points.row(i).to_vec()).collect()).unwrap();
        let shuffled_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        prop_assert!((silhouette(&shuffled, &shuffled_labels).unwrap() - base).abs() < 1e-12);

        let renamed: Vec<usize> = labels.iter().map(|&l| [7, 2, 40][l]).collect();
        prop_assert!((silhouette(&points, &renamed).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn normalized_advantages_ignore_affine_rescaling(
        adv in prop::collection::vec(-10.0f64..10.0, 2..40),
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        prop_assume!(adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64 > 1e-4);
        let base = normalize_advantages(&adv);
        let moved: Vec<f64> = adv.iter().map(|a| a * scale + shift).collect();
        for (x, y) in base.iter().zip(normalize_advantages(&moved)) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn returns_are_advantages_plus_values(
        steps in prop::collection::vec((-1.0f64..1.0, -2.0f64..2.0, any::<bool>()), 1..50),
        bootstrap in -2.0f64..2.0,
        gamma in 0.0f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let rewards: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, ret) = compute_gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
        for t in 0..rewards.len() {
            prop_assert_eq!(ret[t], adv[t] + values[t]);
        }
    }

    #[test]
    fn config_render_round_trips(
        seed in any::<u64>(),
        ising in any::<bool>(),
        clusters in 4usize..300,
        lr in 1e-6f64..1e-2,
        temperature in 0.01f64..2.0,
        flags in any::<[bool; 4]>(),
        steps in 1u64..10_000_000,
    ) {
        let config = ExperimentConfig {
            env: if ising { EnvKind::Ising } else { EnvKind::Gridworld },
            seed,
            clusters,
            lr,
            temperature,
            consecutive_t: flags[0],
            no_action: flags[1],
            no_cluster: flags[2],
            no_pred: flags[3],
            total_env_steps: steps,
            ..Default::default()
        };
        let text = config.render();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &config);
        prop_assert_eq!(back.render(), text);
    }

    #[test]
    fn level_dump_round_trips(seed in any::<u64>()) {
        let level = generate_level(seed);
        let text = level.dump();
        let back = GridLevel::parse(&text).unwrap();
        prop_assert_eq!(&back, &level);
        prop_assert_eq!(back.dump(), text);
    }

    #[test]
    fn keypoints_are_strictly_increasing_and_in_range(
        len in 1usize..60,
        t in 1usize..8,
        consecutive in any::<bool>(),
        seed in any::<u64>(),
    ) {
        prop_assume!(t <= len);
        let mode = if consecutive { ViewMode::Consecutive } else { ViewMode::Sampled };
        let idx = sample_keypoints(len, t, mode, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(idx.len(), t);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*idx.last().unwrap() < len);
        if consecutive {
            prop_assert!(idx.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }
}
