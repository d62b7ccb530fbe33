//! Statistical and structural checks on the scenario builders.

mod common;

use common::checks::{
    balanced_labels as labels, balanced_slack, disjoint, partition_coverage, scenario_spec as spec, tv_low_high_alpha,
    SCENARIO_SEEDS as SEEDS,
};
use fedccl::datagen::{
    build_scenario, build_scenario_from, dirichlet_partition, load_base, synth_gaussians, BaseDataset, DomainTransform,
    Regime, ScenarioSpec,
};

#[test]
fn huge_alpha_is_near_equal_split() {
    let y = labels(10, 200);
    for seed in SEEDS {
        let parts = dirichlet_partition(&y, 5, 1e6, seed).unwrap();
        for p in &parts {
            let counts = p.iter().fold(vec![0usize; 10], |mut acc, &i| {
                acc[y[i]] += 1;
                acc
            });
            for &c in &counts {
                assert!((36..=44).contains(&c), "seed {seed}: count {c} outside 40 ± 10%");
            }
        }
    }
}

#[test]
fn smaller_alpha_diverges_more() {
    let (low, high) = tv_low_high_alpha();
    assert!(low > high, "TV(0.1) = {low}, TV(10) = {high}");
}

#[test]
fn dirichlet_partition_covers_disjointly() {
    partition_coverage().unwrap();
}

#[test]
fn imbalanced_regimes_cover_everything() {
    for regime in [Regime::ImbalancedIntra, Regime::ImbalancedInter] {
        for seed in SEEDS {
            let s = spec(regime, 5, seed);
            let base = load_base::<f64>(&s.base, seed).unwrap();
            let clients = build_scenario_from(&s, &base).unwrap();
            disjoint(&clients).unwrap();
            let train: usize = clients.iter().map(|c| c.train_indices.len()).sum();
            let test: usize = clients.iter().map(|c| c.test_indices.len()).sum();
            assert_eq!(train, base.train.len());
            assert_eq!(test, base.test.len());
            assert!(clients.iter().all(|c| !c.train.is_empty()));
        }
    }
}

#[test]
fn balanced_regimes_have_equal_sizes() {
    let slack = balanced_slack().unwrap();
    assert!(slack <= 10, "size spread {slack}");
}

#[test]
fn balanced_inter_drops_only_remainders() {
    let s = spec(Regime::BalancedInter, 7, 3);
    let base = load_base::<f64>(&s.base, 3).unwrap();
    let clients = build_scenario_from(&s, &base).unwrap();
    let kept: usize = clients.iter().map(|c| c.train.len()).sum();
    assert!(base.train.len() - kept <= 10 * 6);
    for c in &clients[1..] {
        assert_eq!(c.class_counts(), clients[0].class_counts());
    }
}

#[test]
fn imbalanced_intra_sizes_differ() {
    let differs = SEEDS.into_iter().any(|seed| {
        let clients = build_scenario::<f64>(&spec(Regime::ImbalancedIntra, 5, seed)).unwrap();
        clients.iter().any(|c| c.train.len() != clients[0].train.len())
    });
    assert!(differs);
}

#[test]
fn transforms_keep_labels() {
    let s = ScenarioSpec {
        domains: DomainTransform::defaults(),
        ..spec(Regime::ImbalancedInter, 5, 1)
    };
    let base = load_base::<f64>(&s.base, 1).unwrap();
    for c in build_scenario_from(&s, &base).unwrap() {
        let expected: Vec<usize> = c.train_indices.iter().map(|&i| base.train.labels[i]).collect();
        assert_eq!(c.train.labels, expected);
        assert!(c.train.features.is_finite());
    }
}

/// Multinomial logistic regression, trained by full-batch gradient descent.
fn linear_accuracy(seed: u64) -> f64 {
    let BaseDataset::Synthetic {
        classes,
        input_dim,
        per_class,
        spread,
    } = BaseDataset::default()
    else {
        unreachable!()
    };
    let data = synth_gaussians::<f64>(classes, input_dim, per_class, spread, seed).unwrap();
    let (c, d) = (classes, input_dim);
    let mut w = vec![vec![0.0; d + 1]; c];
    let n = data.train.len() as f64;
    for _ in 0..200 {
        let mut grad = vec![vec![0.0; d + 1]; c];
        for (x, &y) in data.train.features.row_iter().zip(&data.train.labels) {
            let z: Vec<f64> = w
                .iter()
                .map(|wc| wc[d] + wc[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for k in 0..c {
                let g = e[k] / s - if k == y { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[k][j] += g * x[j];
                }
                grad[k][d] += g;
            }
        }
        for (wc, gc) in w.iter_mut().zip(&grad) {
            for (a, g) in wc.iter_mut().zip(gc) {
                *a -= 1.0 * g / n;
            }
        }
    }
    let correct = data
        .test
        .features
        .row_iter()
        .zip(&data.test.labels)
        .filter(|(x, &y)| {
            let scores: Vec<f64> = w
                .iter()
                .map(|wc| wc[d] + wc[..d].iter().zip(*x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let best = (0..c).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            best == y
        })
        .count();
    correct as f64 / data.test.len() as f64
}

#[test]
fn default_synthetic_data_is_linearly_separable() {
    for seed in [1, 2, 3] {
        let acc = linear_accuracy(seed);
        assert!(acc >= 0.95, "seed {seed}: linear accuracy {acc}");
    }
}
