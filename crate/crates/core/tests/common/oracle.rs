//! Reference implementations used as test oracles. Everything here is written
//! from the definitions with plain loops and shares no code with the library
//! beyond its data types.

#![allow(dead_code)]

use std::collections::VecDeque;

use fedccl::numerics::{Layer, ModelParams, Tensor2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Signals a query is contrasted against: `(class, vector)`.
pub type Entries = Vec<(usize, Vec<f64>)>;

pub struct NaiveOutput {
    pub features: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    /// Smallest |pre-activation| over every ReLU unit and row.
    pub min_kink_distance: f64,
}

pub fn naive_forward(params: &ModelParams<f64>, x: &[Vec<f64>]) -> NaiveOutput {
    let layers = params.layers();
    let depth = layers.len() - 1;
    let mut min_kink = f64::INFINITY;
    let mut features = Vec::new();
    let mut logits = Vec::new();
    for row in x {
        let mut a = row.clone();
        for (l, layer) in layers.iter().enumerate() {
            let mut z = vec![0.0; layer.output_dim()];
            for (o, zo) in z.iter_mut().enumerate() {
                let mut s = layer.bias[o];
                for (i, ai) in a.iter().enumerate() {
                    s += layer.weight.get(o, i) * ai;
                }
                *zo = s;
            }
            if l < depth {
                for v in z.iter_mut() {
                    min_kink = min_kink.min(v.abs());
                    *v = v.max(0.0);
                }
            }
            if l + 1 == depth {
                features.push(z.clone());
            }
            a = z;
        }
        logits.push(a);
    }
    NaiveOutput {
        features,
        logits,
        min_kink_distance: min_kink,
    }
}

pub fn naive_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let sum: f64 = row.iter().map(|v| v.exp()).sum();
        total += sum.ln() - row[y];
    }
    total / labels.len() as f64
}

/// Cosine similarity, defined as 0 when either norm is below 1e-12.
pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    dot / (na * nb)
}

/// `-ln(Σ_pos exp(cos/τ) / Σ_all exp(cos/τ))`, or `None` without positives.
pub fn naive_contrast(query: &[f64], label: usize, entries: &Entries, tau: f64) -> Option<f64> {
    let mut all = 0.0;
    let mut pos = 0.0;
    for (c, v) in entries {
        let e = (naive_cosine(query, v) / tau).exp();
        all += e;
        if *c == label {
            pos += e;
        }
    }
    (pos > 0.0).then(|| -(pos / all).ln())
}

/// Batch mean of the contrast loss, with skipped samples counted as zero.
pub fn naive_contrast_mean(features: &[Vec<f64>], labels: &[usize], entries: &Entries, tau: f64) -> f64 {
    let total: f64 = features
        .iter()
        .zip(labels)
        .filter_map(|(f, &y)| naive_contrast(f, y, entries, tau))
        .sum();
    total / labels.len() as f64
}

pub struct Objective<'a> {
    pub local: Option<(&'a Entries, f64)>,
    pub global: Option<(&'a Entries, f64)>,
    pub tau: f64,
}

/// Cross-entropy plus weighted contrast terms on the features.
pub fn naive_objective(params: &ModelParams<f64>, x: &[Vec<f64>], labels: &[usize], obj: &Objective<'_>) -> f64 {
    let out = naive_forward(params, x);
    let mut total = naive_cross_entropy(&out.logits, labels);
    for (entries, w) in [obj.local, obj.global].into_iter().flatten() {
        total += w * naive_contrast_mean(&out.features, labels, entries, obj.tau);
    }
    total
}

/// Central finite differences of `f` with respect to every parameter.
pub fn fd_gradient(params: &ModelParams<f64>, h: f64, f: impl Fn(&ModelParams<f64>) -> f64) -> Vec<f64> {
    let n = params.iter().count();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *plus.iter_mut().nth(k).unwrap() += h;
        *minus.iter_mut().nth(k).unwrap() -= h;
        out.push((f(&plus) - f(&minus)) / (2.0 * h));
    }
    out
}

/// Entrywise `|a - b| / max(|a|, |b|, floor)`, maximised over entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn random_params(dims: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> ModelParams<f64> {
    let layers = dims
        .windows(2)
        .map(|w| {
            let mut layer = Layer::zeros(w[0], w[1]);
            for v in layer.weight.as_mut_slice() {
                let z: f64 = StandardNormal.sample(rng);
                *v = scale * z;
            }
            for v in layer.bias.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = 0.1 * z;
            }
            layer
        })
        .collect();
    ModelParams::from_layers(layers).unwrap()
}

pub fn random_rows(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

pub fn random_entries(classes: usize, per_class: usize, dim: usize, rng: &mut ChaCha8Rng) -> Entries {
    let mut out = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            out.push((c, (0..dim).map(|_| StandardNormal.sample(rng)).collect()));
        }
    }
    out
}

pub fn to_tensor(rows: &[Vec<f64>]) -> Tensor2<f64> {
    Tensor2::from_rows(rows).unwrap()
}

/// One level of the reference clustering: assignment with ids numbered by
/// first appearance, and the cluster count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefLevel {
    pub assignment: Vec<usize>,
    pub k: usize,
}

/// Most cosine-similar other point; the lowest index wins ties.
pub fn reference_first_neighbors(points: &[Vec<f64>]) -> Vec<usize> {
    (0..points.len())
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_sim = f64::NEG_INFINITY;
            for j in 0..points.len() {
                if j == i {
                    continue;
                }
                let s = naive_cosine(&points[i], &points[j]);
                if best == usize::MAX || s > best_sim {
                    best = j;
                    best_sim = s;
                }
            }
            best
        })
        .collect()
}

/// Connected components of the explicit first-neighbor adjacency matrix
/// `A[i][j] = 1` iff `j = κ(i)`, `κ(j) = i` or `κ(i) = κ(j)`.
pub fn reference_components(kappa: &[usize]) -> RefLevel {
    let n = kappa.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| i != j && (kappa[i] == j || kappa[j] == i || kappa[i] == kappa[j]))
                .collect()
        })
        .collect();
    let mut assignment = vec![usize::MAX; n];
    let mut k = 0;
    for start in 0..n {
        if assignment[start] != usize::MAX {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        assignment[start] = k;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if adj[u][v] && assignment[v] == usize::MAX {
                    assignment[v] = k;
                    queue.push_back(v);
                }
            }
        }
        k += 1;
    }
    RefLevel { assignment, k }
}

/// Recursive first-neighbor clustering: every level clusters the means (of the
/// original points) of the previous level, until the count stops changing or
/// reaches one. Assignments are expressed over the original points.
pub fn reference_finch(points: &[Vec<f64>]) -> Vec<RefLevel> {
    let n = points.len();
    if n == 1 {
        return vec![RefLevel {
            assignment: vec![0],
            k: 1,
        }];
    }
    let mut levels: Vec<RefLevel> = Vec::new();
    let mut current: Vec<Vec<f64>> = points.to_vec();
    let mut member_of: Vec<usize> = (0..n).collect();
    loop {
        let level = reference_components(&reference_first_neighbors(&current));
        let assignment: Vec<usize> = member_of.iter().map(|&m| level.assignment[m]).collect();
        let k = level.k;
        if levels.last().is_some_and(|prev| prev.k == k) {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
            counts[c] += 1;
        }
        current = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
            .collect();
        member_of = assignment.clone();
        levels.push(RefLevel { assignment, k });
        if k == 1 {
            break;
        }
    }
    levels
}
