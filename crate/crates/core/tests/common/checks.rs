//! Check routines shared by the unit-level test files and the acceptance
//! runner. Each returns the measured quantity, or a description of the first
//! violation.

#![allow(dead_code)]

use std::collections::HashSet;

use fedccl::adversarial::{adversarial_total_loss, pgd_perturb, AttackConfig, AttackObjective};
use fedccl::contrast::{total_loss, Ablation, ContrastContext};
use fedccl::datagen::{build_scenario, dirichlet_partition, BaseDataset, ClientDataset, Regime, ScenarioSpec};
use fedccl::finch::finch_cluster;
use fedccl::numerics::{input_gradient, ModelParams};
use fedccl::signals::{ClassSignalPool, GlobalSignalTable, PooledSignal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::oracle::*;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so entries that are zero on both
/// sides are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const TAU: f64 = 0.07;
pub const DRAWS: usize = 50;

fn context(local: &Entries, global: &Entries, classes: usize) -> ContrastContext<f64> {
    let mut per_class = vec![Vec::new(); classes];
    for (i, (c, v)) in local.iter().enumerate() {
        per_class[*c].push(PooledSignal {
            client: i % 3,
            vector: v.clone(),
        });
    }
    let mut signals = vec![None; classes];
    for (c, v) in global {
        signals[*c] = Some(v.clone());
    }
    ContrastContext::new(
        Some(ClassSignalPool { per_class }),
        Some(GlobalSignalTable {
            signals,
            clustered: vec![Vec::new(); classes],
        }),
        TAU,
    )
    .unwrap()
}

pub struct Draw {
    pub params: ModelParams<f64>,
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub local: Entries,
    pub global: Entries,
}

/// Random small problem whose ReLU units all sit away from their kink.
pub fn draw(rng: &mut ChaCha8Rng, classes: usize) -> Draw {
    loop {
        let dims = [5, 7, 4, classes];
        let params = random_params(&dims, 0.6, rng);
        let n = rng.random_range(2..=6);
        let x = random_rows(n, dims[0], rng);
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        if naive_forward(&params, &x).min_kink_distance < 1e-3 {
            continue;
        }
        // one class left out of the local pool so some samples have no positives
        let local: Entries = random_entries(classes, 2, dims[2], rng)
            .into_iter()
            .filter(|(c, _)| *c != classes - 1)
            .collect();
        let global = random_entries(classes, 1, dims[2], rng);
        return Draw {
            params,
            x,
            labels,
            local,
            global,
        };
    }
}

/// Worst relative error of the clean objective's parameter gradient.
pub fn parameter_gradient(ablation: Ablation<f64>, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..DRAWS {
        let d = draw(&mut rng, 3);
        let ctx = context(&d.local, &d.global, 3);
        let (loss, grads) = total_loss(&d.params, &to_tensor(&d.x), &d.labels, &ctx, &ablation).map_err(|e| e.to_string())?;
        let obj = Objective {
            local: ablation.use_local.then_some((&d.local, ablation.local_weight)),
            global: ablation.use_global.then_some((&d.global, ablation.global_weight)),
            tau: TAU,
        };
        let reference = naive_objective(&d.params, &d.x, &d.labels, &obj);
        if (loss.total - reference).abs() >= 1e-10 {
            return Err(format!("loss {} differs from reference {reference}", loss.total));
        }
        let fd = fd_gradient(&d.params, FD_STEP, |p| naive_objective(p, &d.x, &d.labels, &obj));
        let analytic: Vec<f64> = grads.iter().copied().collect();
        worst = worst.max(max_relative_error(&analytic, &fd, GRAD_FLOOR));
    }
    Ok(worst)
}

/// Same for the robust objective, with the generated perturbation held fixed.
pub fn adversarial_gradient(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atk = AttackConfig::pgd(0.1, 0.02, 5);
    let ablation = Ablation::both();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < DRAWS {
        let d = draw(&mut rng, 3);
        let ctx = context(&d.local, &d.global, 3);
        let (loss, grads, adv) = adversarial_total_loss(&d.params, &to_tensor(&d.x), &d.labels, &ctx, &ablation, &atk, &mut rng)
            .map_err(|e| e.to_string())?;
        let adv_rows: Vec<Vec<f64>> = adv.row_iter().map(<[f64]>::to_vec).collect();
        if naive_forward(&d.params, &adv_rows).min_kink_distance < 1e-3 {
            continue;
        }
        let obj = Objective {
            local: Some((&d.local, 1.0)),
            global: Some((&d.global, 1.0)),
            tau: TAU,
        };
        let reference = naive_objective(&d.params, &adv_rows, &d.labels, &obj);
        if (loss.total - reference).abs() >= 1e-10 {
            return Err(format!("loss {} differs from reference {reference}", loss.total));
        }
        let fd = fd_gradient(&d.params, FD_STEP, |p| naive_objective(p, &adv_rows, &d.labels, &obj));
        let analytic: Vec<f64> = grads.iter().copied().collect();
        worst = worst.max(max_relative_error(&analytic, &fd, GRAD_FLOOR));
        done += 1;
    }
    Ok(worst)
}

/// Worst relative error of the cross-entropy gradient with respect to the input.
pub fn input_gradient_error(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let obj = Objective {
        local: None,
        global: None,
        tau: TAU,
    };
    for _ in 0..DRAWS {
        let d = draw(&mut rng, 3);
        let (_, g) = input_gradient(&d.params, &to_tensor(&d.x), &d.labels, &[]).map_err(|e| e.to_string())?;
        let mut fd = Vec::new();
        for r in 0..d.x.len() {
            for c in 0..d.x[0].len() {
                let (mut plus, mut minus) = (d.x.clone(), d.x.clone());
                plus[r][c] += FD_STEP;
                minus[r][c] -= FD_STEP;
                let f = |x: &[Vec<f64>]| naive_objective(&d.params, x, &d.labels, &obj);
                fd.push((f(&plus) - f(&minus)) / (2.0 * FD_STEP));
            }
        }
        worst = worst.max(max_relative_error(g.as_slice(), &fd, GRAD_FLOOR));
    }
    Ok(worst)
}

/// Points around a few random centres, so hierarchies have several levels.
fn clustered_instance(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=64);
    let d = rng.random_range(1..=16);
    let centres: Vec<Vec<f64>> = (0..rng.random_range(1..=6))
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let spread = rng.random_range(0.05..1.0);
    (0..n)
        .map(|_| {
            let c = &centres[rng.random_range(0..centres.len())];
            c.iter()
                .map(|&v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v + spread * z
                })
                .collect()
        })
        .collect()
}

/// Compares every level of the clustering with the reference; returns the
/// number of instances checked.
pub fn finch_against_reference(instances: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let points = clustered_instance(&mut rng);
        let expected = reference_finch(&points);
        let got: Vec<RefLevel> = finch_cluster(&points)
            .map_err(|e| e.to_string())?
            .levels
            .into_iter()
            .map(|p| RefLevel {
                assignment: p.assignment,
                k: p.k,
            })
            .collect();
        if got != expected {
            return Err(format!(
                "instance {case} (n = {}): got {:?}, expected {:?}",
                points.len(),
                got.iter().map(|l| l.k).collect::<Vec<_>>(),
                expected.iter().map(|l| l.k).collect::<Vec<_>>()
            ));
        }
    }
    Ok(instances)
}

/// Largest `‖x_adv − x‖∞ − ε` over random models, batches and attacks
/// (including FGSM and 20-step PGD).
pub fn attack_bound(cases: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for case in 0..cases {
        let params = random_params(&[6, 8, 5, 3], 1.0, &mut rng);
        let x = to_tensor(&random_rows(10, 6, &mut rng));
        let y: Vec<usize> = (0..10).map(|_| rng.random_range(0..3)).collect();
        let eps = rng.random_range(0.0..0.5);
        let step = rng.random_range(0.0..0.2);
        for atk in [AttackConfig::fgsm(eps), AttackConfig::pgd(eps, step, 20), AttackConfig::pgd_eval(eps, 20)] {
            let adv = pgd_perturb(&params, &x, &y, &atk, AttackObjective::CrossEntropy, &mut rng).map_err(|e| e.to_string())?;
            for (a, b) in adv.as_slice().iter().zip(x.as_slice()) {
                if !(0.0..=1.0).contains(a) {
                    return Err(format!("case {case}: value {a} outside [0, 1]"));
                }
                worst = worst.max((a - b).abs() - eps);
            }
        }
    }
    if worst > 1e-12 {
        return Err(format!("radius exceeded by {worst:e}"));
    }
    Ok(worst)
}

pub const SCENARIO_SEEDS: std::ops::Range<u64> = 0..10;

pub fn balanced_labels(classes: usize, per: usize) -> Vec<usize> {
    (0..classes).flat_map(|c| std::iter::repeat_n(c, per)).collect()
}

pub fn scenario_spec(regime: Regime, n_clients: usize, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        regime,
        n_clients,
        base: BaseDataset::Synthetic {
            classes: 10,
            input_dim: 16,
            per_class: 60,
            spread: 0.25,
        },
        seed,
        ..ScenarioSpec::default()
    }
}

fn label_hist(y: &[usize], classes: usize) -> Vec<f64> {
    let mut h = vec![0.0; classes];
    for &c in y {
        h[c] += 1.0;
    }
    let n = y.len().max(1) as f64;
    h.iter().map(|v| v / n).collect()
}

/// Mean over clients of the total-variation distance between the client's
/// label distribution and the pooled one.
pub fn mean_tv(parts: &[Vec<usize>], y: &[usize], classes: usize) -> f64 {
    let global = label_hist(y, classes);
    let tv: f64 = parts
        .iter()
        .filter(|p| !p.is_empty())
        .map(|p| {
            let local: Vec<usize> = p.iter().map(|&i| y[i]).collect();
            let h = label_hist(&local, classes);
            0.5 * h.iter().zip(&global).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum();
    tv / parts.len() as f64
}

/// Seed-averaged label divergence at a small and a large concentration.
pub fn tv_low_high_alpha() -> (f64, f64) {
    let y = balanced_labels(10, 100);
    let avg = |alpha: f64| {
        SCENARIO_SEEDS
            .map(|s| mean_tv(&dirichlet_partition(&y, 8, alpha, s).unwrap(), &y, 10))
            .sum::<f64>()
            / SCENARIO_SEEDS.count() as f64
    };
    (avg(0.1), avg(10.0))
}

pub fn partition_coverage() -> Result<(), String> {
    let y = balanced_labels(7, 33);
    for seed in SCENARIO_SEEDS {
        let parts = dirichlet_partition(&y, 6, 0.3, seed).map_err(|e| e.to_string())?;
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        if all != (0..y.len()).collect::<Vec<_>>() {
            return Err(format!("seed {seed}: indices lost or repeated"));
        }
    }
    Ok(())
}

pub fn disjoint(clients: &[ClientDataset<f64>]) -> Result<(), String> {
    let mut train = HashSet::new();
    let mut test = HashSet::new();
    for c in clients {
        if let Some(i) = c.train_indices.iter().find(|&&i| !train.insert(i)) {
            return Err(format!("train index {i} assigned twice"));
        }
        if let Some(i) = c.test_indices.iter().find(|&&i| !test.insert(i)) {
            return Err(format!("test index {i} assigned twice"));
        }
    }
    Ok(())
}

/// Largest train-size spread over balanced scenarios, which must stay within
/// the class count.
pub fn balanced_slack() -> Result<usize, String> {
    let mut worst = 0;
    for regime in [Regime::BalancedIntra, Regime::BalancedInter] {
        for seed in SCENARIO_SEEDS {
            let clients = build_scenario::<f64>(&scenario_spec(regime, 4, seed)).map_err(|e| e.to_string())?;
            disjoint(&clients).map_err(|e| format!("{regime} seed {seed}: {e}"))?;
            let sizes: Vec<usize> = clients.iter().map(|c| c.train.len()).collect();
            worst = worst.max(sizes.iter().max().unwrap() - sizes.iter().min().unwrap());
        }
    }
    Ok(worst)
}
