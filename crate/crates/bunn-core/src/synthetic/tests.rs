use approx::assert_abs_diff_eq;
use rand::Rng;

use super::*;
use crate::train::Target;

fn barbell_task(seed: u64, half_width: f64) -> AveragingTask {
    AveragingTask {
        kind: AveragingKind::Barbell,
        n: 10,
        dims: default_dims(),
        train_samples: 20,
        test_samples: 20,
        seed,
        half_width,
    }
}

#[test]
fn zero_width_inputs_sit_at_cluster_means() {
    let data = averaging_dataset(&barbell_task(1, 0.0)).unwrap();
    let m = cluster_mean();
    for s in data.dataset.train.iter().chain(data.dataset.test.iter()) {
        let Target::Signal(y) = &s.target else {
            panic!("regression target expected")
        };
        for (v, &ty) in data.types.iter().enumerate() {
            let expect_x = if ty == 0 { m } else { -m };
            for j in 0..default_dims() {
                assert_abs_diff_eq!(s.x[[v, j]], expect_x, epsilon = 1e-12);
                // target is the opposite cluster's (exact) mean
                assert_abs_diff_eq!(y[[v, j]], -expect_x, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn targets_are_opposite_type_means() {
    let data = averaging_dataset(&barbell_task(2, default_half_width())).unwrap();
    for s in &data.dataset.train {
        let Target::Signal(y) = &s.target else {
            panic!("regression target expected")
        };
        for (v, &ty) in data.types.iter().enumerate() {
            for j in [0usize, default_dims() - 1] {
                let opposite: Vec<f64> = data
                    .types
                    .iter()
                    .enumerate()
                    .filter(|(_, &t2)| t2 != ty)
                    .map(|(u, _)| s.x[[u, j]])
                    .collect();
                let mean = opposite.iter().sum::<f64>() / opposite.len() as f64;
                assert_abs_diff_eq!(y[[v, j]], mean, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn cluster_supports_are_disjoint_at_default_width() {
    // half-width √(3/8) < √3/2: every node's type is readable off any single
    // feature's sign, as the task description requires
    assert!(default_half_width() < cluster_mean());
    let data = averaging_dataset(&barbell_task(3, default_half_width())).unwrap();
    for s in &data.dataset.train {
        for (v, &ty) in data.types.iter().enumerate() {
            for j in 0..default_dims() {
                let sign_ok = if ty == 0 {
                    s.x[[v, j]] > 0.0
                } else {
                    s.x[[v, j]] < 0.0
                };
                assert!(sign_ok, "node {v} dim {j}");
            }
        }
    }
}

#[test]
fn reference_predictor_mse_is_near_one_at_default_width() {
    // Monte-Carlo with 10⁵ draws of a 5-sample uniform mean: the
    // opposite-cluster-mean predictor's per-node MSE is 40 × the variance of
    // a per-dimension sample mean, which the default calibration pins to 1
    let w = default_half_width();
    let mut r = crate::rng::stream(3, "mc-baseline");
    let mut total = 0.0;
    let draws = 100_000;
    for _ in 0..draws {
        let mean: f64 = (0..5)
            .map(|_| r.gen_range(-w..=w))
            .sum::<f64>()
            / 5.0;
        total += mean * mean;
    }
    let mse = default_dims() as f64 * total / draws as f64;
    assert!((mse - 1.0).abs() < 0.02, "monte-carlo mse {mse}");

    // and the dataset-level empirical estimate agrees
    let task = AveragingTask {
        train_samples: 2000,
        test_samples: 0,
        ..barbell_task(4, w)
    };
    let data = averaging_dataset(&task).unwrap();
    let emp = opposite_mean_reference_mse(&data, &data.dataset.train);
    assert!((emp - 1.0).abs() < 0.05, "empirical mse {emp}");
}

#[test]
fn constant_zero_reference_exceeds_opposite_mean_reference() {
    let task = AveragingTask {
        train_samples: 2000,
        test_samples: 0,
        ..barbell_task(5, default_half_width())
    };
    let data = averaging_dataset(&task).unwrap();
    let zero = constant_zero_reference_mse(&data.dataset.train);
    let opp = opposite_mean_reference_mse(&data, &data.dataset.train);
    // E[‖target‖²] = 40·((√3/2)² + var(per-dim sample mean)) = 30 + 1
    assert!((zero - 31.0).abs() < 0.5, "zero-predictor mse {zero}");
    assert!(zero > opp);
}

#[test]
fn datasets_are_bit_deterministic() {
    let a = averaging_dataset(&barbell_task(6, default_half_width())).unwrap();
    let b = averaging_dataset(&barbell_task(6, default_half_width())).unwrap();
    assert_eq!(a.dataset.train[0].x.ncols(), default_dims());
    for (s1, s2) in a.dataset.train.iter().zip(b.dataset.train.iter()) {
        for (x, y) in s1.x.iter().zip(s2.x.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    let c = averaging_dataset(&barbell_task(7, default_half_width())).unwrap();
    assert_ne!(
        a.dataset.train[0].x[[0, 0]].to_bits(),
        c.dataset.train[0].x[[0, 0]].to_bits()
    );
}

#[test]
fn clique_task_types_split_evenly() {
    let task = AveragingTask {
        kind: AveragingKind::Clique,
        ..barbell_task(8, 1.0)
    };
    let data = averaging_dataset(&task).unwrap();
    assert_eq!(data.types.iter().filter(|&&t| t == 0).count(), 5);
    assert_eq!(data.dataset.graph.edge_count(), 45);
}

#[test]
fn neighborsmatch_labels_match_counts() {
    let task = NeighborsMatchTask {
        depth: 3,
        train_samples: 30,
        test_samples: 10,
        seed: 9,
    };
    let data = neighborsmatch_dataset(&task).unwrap();
    let l = data.classes;
    assert_eq!(l, 8);
    for s in data.dataset.train.iter().chain(data.dataset.test.iter()) {
        let Target::Class { node, label } = s.target else {
            panic!("classification target expected")
        };
        assert_eq!(node, data.root);
        // counts over leaves are a permutation of 1..=L
        let mut counts: Vec<usize> = data
            .leaves
            .iter()
            .map(|&leaf| (s.x[[leaf, l]] * l as f64).round() as usize)
            .collect();
        let query = (s.x[[data.root, l]] * l as f64).round() as usize;
        assert_eq!(
            counts[label], query,
            "label's leaf must hold the queried count"
        );
        counts.sort_unstable();
        assert_eq!(counts, (1..=l).collect::<Vec<_>>());
        // class one-hots are fixed to leaf identity
        for (i, &leaf) in data.leaves.iter().enumerate() {
            for j in 0..l {
                assert_eq!(s.x[[leaf, j]], f64::from(u8::from(i == j)));
            }
        }
    }
}

#[test]
fn neighborsmatch_is_deterministic() {
    let task = NeighborsMatchTask {
        depth: 2,
        train_samples: 12,
        test_samples: 4,
        seed: 10,
    };
    let a = neighborsmatch_dataset(&task).unwrap();
    let b = neighborsmatch_dataset(&task).unwrap();
    for (s1, s2) in a.dataset.train.iter().zip(b.dataset.train.iter()) {
        assert_eq!(s1.x, s2.x);
        let (Target::Class { label: l1, .. }, Target::Class { label: l2, .. }) =
            (&s1.target, &s2.target)
        else {
            panic!("classification targets expected")
        };
        assert_eq!(l1, l2);
    }
}
