//! Parameter-free first-neighbor hierarchical clustering.
//!
//! Each point is linked to its most cosine-similar other point. Points are
//! grouped by the connected components of those links; the groups are then
//! replaced by their means and the procedure repeats on the means until the
//! number of clusters stops changing or a single cluster remains.

use crate::error::{Error, Result};
use crate::numerics::{mean_of, norm};
use crate::numerics::cosine_from_norms;
use crate::scalar::Scalar;

/// `first_neighbor[i]` is the index of the point most similar to point `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborTable {
    pub first_neighbor: Vec<usize>,
}

/// Assignment of points to clusters `0..k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterPartition {
    pub assignment: Vec<usize>,
    pub k: usize,
    pub level: usize,
}

impl ClusterPartition {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Member indices per cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }
}

/// Which level of the hierarchy supplies the signal clusters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LevelChoice {
    /// The level at which the recursion stopped.
    #[default]
    Final,
    /// The last level that still has more than one cluster (falls back to
    /// `Final` when no such level exists).
    LastMultiCluster,
}

/// All levels produced by [`finch_cluster`], finest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hierarchy {
    pub levels: Vec<ClusterPartition>,
}

impl Hierarchy {
    pub fn final_partition(&self) -> &ClusterPartition {
        self.levels.last().expect("hierarchy has at least one level")
    }

    pub fn select(&self, choice: LevelChoice) -> &ClusterPartition {
        match choice {
            LevelChoice::Final => self.final_partition(),
            LevelChoice::LastMultiCluster => self
                .levels
                .iter()
                .rev()
                .find(|p| p.k > 1)
                .unwrap_or_else(|| self.final_partition()),
        }
    }
}

/// Most cosine-similar other point for each point. Equal similarities resolve
/// to the lowest candidate index.
pub fn first_neighbors<S: Scalar, V: AsRef<[S]>>(vectors: &[V]) -> Result<NeighborTable> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::EmptyInput("first_neighbors needs at least 2 vectors"));
    }
    let dim = vectors[0].as_ref().len();
    if let Some(bad) = vectors.iter().find(|v| v.as_ref().len() != dim) {
        return Err(Error::shape("first_neighbors", dim, bad.as_ref().len()));
    }
    let norms: Vec<S> = vectors.iter().map(|v| norm(v.as_ref())).collect();
    let mut best_sim = vec![S::neg_infinity(); n];
    let mut best = vec![usize::MAX; n];
    // similarity is symmetric; each pair is evaluated once, in ascending (i, j)
    for i in 0..n {
        let a = vectors[i].as_ref();
        for j in (i + 1)..n {
            let s = cosine_from_norms(a, norms[i], vectors[j].as_ref(), norms[j]).value;
            // j ascends for row i, and i < j is visited before any larger
            // candidate for row j, so strict comparison keeps the lowest index
            if s > best_sim[i] {
                best_sim[i] = s;
                best[i] = j;
            }
            if s > best_sim[j] {
                best_sim[j] = s;
                best[j] = i;
            }
        }
    }
    Ok(NeighborTable {
        first_neighbor: best,
    })
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the first-neighbor graph. Points `m` and `n` are
/// linked when one is the other's first neighbor or both share the same first
/// neighbor; the shared case is implied transitively by the first two, so
/// linking every point to its neighbor is enough. Cluster ids follow first
/// appearance in index order.
pub fn adjacency_partition(neighbors: &NeighborTable) -> ClusterPartition {
    let n = neighbors.first_neighbor.len();
    let mut sets = DisjointSet::new(n);
    for (i, &j) in neighbors.first_neighbor.iter().enumerate() {
        sets.union(i, j);
    }
    let mut label = vec![usize::MAX; n];
    let mut assignment = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let root = sets.find(i);
        if label[root] == usize::MAX {
            label[root] = k;
            k += 1;
        }
        assignment.push(label[root]);
    }
    ClusterPartition {
        assignment,
        k,
        level: 0,
    }
}

/// Mean vector of each cluster.
pub fn cluster_means<S: Scalar, V: AsRef<[S]>>(vectors: &[V], partition: &ClusterPartition) -> Vec<Vec<S>> {
    let dim = vectors.first().map_or(0, |v| v.as_ref().len());
    partition
        .members()
        .iter()
        .map(|idx| {
            mean_of(idx.iter().map(|&i| vectors[i].as_ref()), dim)
                .expect("every cluster has a member")
        })
        .collect()
}

/// Builds the full coarsening hierarchy.
///
/// Level 0 clusters the input; each further level clusters the means of the
/// previous level's clusters (taken over the original points) and maps points
/// through the composition. Stops once a level has one cluster or the count
/// did not change.
pub fn finch_cluster<S: Scalar, V: AsRef<[S]>>(vectors: &[V]) -> Result<Hierarchy> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::EmptyInput("finch_cluster needs at least 1 vector"));
    }
    if n == 1 {
        return Ok(Hierarchy {
            levels: vec![ClusterPartition {
                assignment: vec![0],
                k: 1,
                level: 0,
            }],
        });
    }
    let mut current = adjacency_partition(&first_neighbors(vectors)?);
    let mut levels = Vec::new();
    loop {
        let k = current.k;
        levels.push(current.clone());
        if k == 1 {
            break;
        }
        let means = cluster_means(vectors, &current);
        let merged = adjacency_partition(&first_neighbors(&means)?);
        if merged.k == k {
            break;
        }
        current = ClusterPartition {
            assignment: current
                .assignment
                .iter()
                .map(|&c| merged.assignment[c])
                .collect(),
            k: merged.k,
            level: current.level + 1,
        };
    }
    Ok(Hierarchy { levels })
}
