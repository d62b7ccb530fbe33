//! Per-class local signals on each client, their pooling at the server, and
//! the global per-class signal derived from the pool.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::finch::{cluster_means, finch_cluster, LevelChoice};
use crate::numerics::{mean_of, Tensor2};
use crate::scalar::Scalar;

/// How a set of vectors is condensed into signals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SignalKind {
    /// Cluster with first-neighbor clustering and keep the cluster means.
    #[default]
    Clustered,
    /// Plain mean of all vectors.
    Averaged,
}

/// Signals one client reports; `per_class[c]` is empty for absent classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalSignalSet<S> {
    pub client: usize,
    pub per_class: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> LocalSignalSet<S> {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledSignal<S> {
    pub client: usize,
    pub vector: Vec<S>,
}

/// All clients' local signals, concatenated per class in client order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSignalPool<S> {
    pub per_class: Vec<Vec<PooledSignal<S>>>,
}

impl<S: Scalar> ClassSignalPool<S> {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.per_class.iter().all(Vec::is_empty)
    }

    pub fn class_vectors(&self, class: usize) -> Vec<&[S]> {
        self.per_class[class]
            .iter()
            .map(|s| s.vector.as_slice())
            .collect()
    }
}

/// One global signal per class that had pooled signals.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalSignalTable<S> {
    pub signals: Vec<Option<Vec<S>>>,
    /// Intermediate cluster means per class (empty for the averaged variant).
    pub clustered: Vec<Vec<Vec<S>>>,
}

impl<S: Scalar> GlobalSignalTable<S> {
    pub fn num_classes(&self) -> usize {
        self.signals.len()
    }

    pub fn get(&self, class: usize) -> Option<&[S]> {
        self.signals.get(class).and_then(|s| s.as_deref())
    }

    pub fn is_empty(&self) -> bool {
        self.signals.iter().all(Option::is_none)
    }
}

/// Groups feature rows by label: `out[c]` lists the embeddings of class `c`.
pub fn embeddings_by_class<S: Scalar>(
    features: &Tensor2<S>,
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<Vec<S>>>> {
    if labels.len() != features.rows() {
        return Err(Error::shape("embeddings_by_class", features.rows(), labels.len()));
    }
    let mut out = vec![Vec::new(); num_classes];
    for (row, &y) in features.row_iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::Label {
                label: y,
                classes: num_classes,
            });
        }
        out[y].push(row.to_vec());
    }
    Ok(out)
}

fn clustered_means<S: Scalar>(vectors: &[Vec<S>], level: LevelChoice) -> Result<Vec<Vec<S>>> {
    match vectors.len() {
        0 => Ok(Vec::new()),
        1 => Ok(vec![vectors[0].clone()]),
        _ => {
            let hierarchy = finch_cluster(vectors)?;
            Ok(cluster_means(vectors, hierarchy.select(level)))
        }
    }
}

/// Clusters each class's embeddings and returns the final cluster means.
pub fn local_signals<S: Scalar>(
    client: usize,
    by_class: &[Vec<Vec<S>>],
    level: LevelChoice,
) -> Result<LocalSignalSet<S>> {
    let per_class = by_class
        .iter()
        .map(|v| clustered_means(v, level))
        .collect::<Result<_>>()?;
    Ok(LocalSignalSet { client, per_class })
}

/// Per-class plain mean of the embeddings; `None` for classes without samples.
pub fn avg_local_signal<S: Scalar>(by_class: &[Vec<Vec<S>>]) -> Vec<Option<Vec<S>>> {
    by_class
        .iter()
        .map(|v| {
            let dim = v.first().map_or(0, Vec::len);
            mean_of(v.iter().map(Vec::as_slice), dim)
        })
        .collect()
}

/// Local signals with the requested condensation. The averaged variant yields
/// at most one signal per class.
pub fn local_signals_of_kind<S: Scalar>(
    client: usize,
    by_class: &[Vec<Vec<S>>],
    kind: SignalKind,
    level: LevelChoice,
) -> Result<LocalSignalSet<S>> {
    match kind {
        SignalKind::Clustered => local_signals(client, by_class, level),
        SignalKind::Averaged => Ok(LocalSignalSet {
            client,
            per_class: avg_local_signal(by_class)
                .into_iter()
                .map(|m| m.into_iter().collect())
                .collect(),
        }),
    }
}

/// Concatenates every client's signals per class, preserving client order.
pub fn pool_signals<S: Scalar>(sets: &[LocalSignalSet<S>]) -> Result<ClassSignalPool<S>> {
    let num_classes = sets
        .first()
        .ok_or(Error::EmptyInput("pool_signals needs at least one client"))?
        .num_classes();
    let mut per_class: Vec<Vec<PooledSignal<S>>> = vec![Vec::new(); num_classes];
    for set in sets {
        if set.num_classes() != num_classes {
            return Err(Error::shape("pool_signals classes", num_classes, set.num_classes()));
        }
        for (class, signals) in set.per_class.iter().enumerate() {
            per_class[class].extend(signals.iter().map(|v| PooledSignal {
                client: set.client,
                vector: v.clone(),
            }));
        }
    }
    Ok(ClassSignalPool { per_class })
}

/// Clusters each class pool and averages the resulting cluster means into one
/// signal per class.
pub fn global_signals<S: Scalar>(pool: &ClassSignalPool<S>, level: LevelChoice) -> Result<GlobalSignalTable<S>> {
    let mut signals = Vec::with_capacity(pool.num_classes());
    let mut clustered = Vec::with_capacity(pool.num_classes());
    for class in 0..pool.num_classes() {
        let vectors: Vec<Vec<S>> = pool.per_class[class]
            .iter()
            .map(|s| s.vector.clone())
            .collect();
        let means = clustered_means(&vectors, level)?;
        let dim = means.first().map_or(0, Vec::len);
        signals.push(mean_of(means.iter().map(Vec::as_slice), dim));
        clustered.push(means);
    }
    Ok(GlobalSignalTable { signals, clustered })
}

/// Plain mean of each class pool.
pub fn avg_global_signal<S: Scalar>(pool: &ClassSignalPool<S>) -> GlobalSignalTable<S> {
    let signals = (0..pool.num_classes())
        .map(|class| {
            let vectors = pool.class_vectors(class);
            let dim = vectors.first().map_or(0, |v| v.len());
            mean_of(vectors, dim)
        })
        .collect();
    GlobalSignalTable {
        signals,
        clustered: vec![Vec::new(); pool.num_classes()],
    }
}

pub fn global_signals_of_kind<S: Scalar>(
    pool: &ClassSignalPool<S>,
    kind: SignalKind,
    level: LevelChoice,
) -> Result<GlobalSignalTable<S>> {
    match kind {
        SignalKind::Clustered => global_signals(pool, level),
        SignalKind::Averaged => Ok(avg_global_signal(pool)),
    }
}

/// One line of the signal debug dump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalRecord {
    pub round: usize,
    /// Originating client, or `None` for a global signal.
    pub client: Option<usize>,
    pub class: usize,
    pub vector: Vec<f64>,
}

pub fn signal_records<S: Scalar>(
    round: usize,
    pool: &ClassSignalPool<S>,
    table: &GlobalSignalTable<S>,
) -> Vec<SignalRecord> {
    let mut out = Vec::new();
    for (class, signals) in pool.per_class.iter().enumerate() {
        out.extend(signals.iter().map(|s| SignalRecord {
            round,
            client: Some(s.client),
            class,
            vector: s.vector.iter().map(|v| v.as_f64()).collect(),
        }));
    }
    for (class, u) in table.signals.iter().enumerate() {
        if let Some(u) = u {
            out.push(SignalRecord {
                round,
                client: None,
                class,
                vector: u.iter().map(|v| v.as_f64()).collect(),
            });
        }
    }
    out
}
