//! Desk-scale datasets and the four client heterogeneity regimes.

mod idx;
mod partition;
mod transform;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use idx::{load_idx, parse_images, parse_labels, write_idx_images, write_idx_labels, IdxImages};
pub use partition::{
    assign_by_shares, class_indices, dirichlet_partition, dirichlet_shares, fill_empty_clients,
    preferred_class_shares, subsample, uniform_shares, LabelShares,
};
pub use transform::{domain_transform, DomainTransform};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::scalar::Scalar;

/// Feature rows with integer labels in `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    pub features: Tensor2<S>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(features: Tensor2<S>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape("Dataset labels", features.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Label {
                label: bad,
                classes: num_classes,
            });
        }
        if !features.is_finite() {
            return Err(Error::invalid("features", "contain NaN or infinity"));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset<S> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
}

/// Per class, the first `n / 5` samples (after a seeded shuffle) go to test
/// and the rest to train; so a class with fewer than 5 samples has no test
/// samples.
pub fn split_train_test<S: Scalar>(ds: &Dataset<S>, seed: u64) -> SplitDataset<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut idx in class_indices(&ds.labels, ds.num_classes) {
        idx.shuffle(&mut rng);
        let n_test = idx.len() / 5;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    SplitDataset {
        train: ds.subset(&train),
        test: ds.subset(&test),
    }
}

/// Class-conditional isotropic Gaussians around fixed unit-norm centers.
///
/// Centers are the standard basis vectors when `classes <= input_dim`, which
/// puts every pair at distance √2; otherwise they are seeded random unit
/// vectors. Samples are split 80/20 with [`split_train_test`].
pub fn synth_gaussians<S: Scalar>(
    classes: usize,
    input_dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<SplitDataset<S>> {
    if classes < 2 {
        return Err(Error::invalid("classes", "need at least 2 classes"));
    }
    if input_dim == 0 {
        return Err(Error::invalid("input_dim", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = if classes <= input_dim {
        (0..classes)
            .map(|c| (0..input_dim).map(|j| if j == c { 1.0 } else { 0.0 }).collect())
            .collect()
    } else {
        (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    };
    let mut data = Vec::with_capacity(classes * per_class * input_dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &m in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(S::of(m + spread * z));
            }
            labels.push(c);
        }
    }
    let all = Dataset::new(Tensor2::from_vec(labels.len(), input_dim, data)?, labels, classes)?;
    Ok(split_train_test(&all, seed.wrapping_add(SPLIT_SALT)))
}

const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// The four client heterogeneity regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Same input distribution and client size, skewed label shares.
    BalancedIntra,
    /// Same input distribution, Dirichlet label shares and sizes.
    ImbalancedIntra,
    /// One input domain per client, uniform labels, equal sizes.
    BalancedInter,
    /// One input domain per client, Dirichlet label shares and sizes.
    ImbalancedInter,
}

impl Regime {
    pub fn is_inter(self) -> bool {
        matches!(self, Regime::BalancedInter | Regime::ImbalancedInter)
    }

    pub fn is_balanced(self) -> bool {
        matches!(self, Regime::BalancedIntra | Regime::BalancedInter)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::BalancedIntra => "balanced-intra",
            Regime::ImbalancedIntra => "imbalanced-intra",
            Regime::BalancedInter => "balanced-inter",
            Regime::ImbalancedInter => "imbalanced-inter",
        })
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced-intra" => Ok(Regime::BalancedIntra),
            "imbalanced-intra" => Ok(Regime::ImbalancedIntra),
            "balanced-inter" => Ok(Regime::BalancedInter),
            "imbalanced-inter" => Ok(Regime::ImbalancedInter),
            other => Err(Error::invalid("regime", format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BaseDataset {
    Synthetic {
        classes: usize,
        input_dim: usize,
        per_class: usize,
        spread: f64,
    },
    /// IDX files. Without a test pair the train pair is split 80/20.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
}

impl Default for BaseDataset {
    fn default() -> Self {
        BaseDataset::Synthetic {
            classes: 10,
            input_dim: 32,
            per_class: 200,
            spread: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub regime: Regime,
    pub n_clients: usize,
    /// Dirichlet concentration for the imbalanced regimes.
    pub alpha: f64,
    /// Domains for the inter regimes, cycled over clients. Empty means
    /// [`DomainTransform::defaults`].
    pub domains: Vec<DomainTransform>,
    pub base: BaseDataset,
    pub seed: u64,
    /// Uniform subsample of the base train / test sets before partitioning.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub max_train_per_client: Option<usize>,
    pub max_test_per_client: Option<usize>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            regime: Regime::ImbalancedIntra,
            n_clients: 5,
            alpha: 0.5,
            domains: Vec::new(),
            base: BaseDataset::default(),
            seed: 1,
            train_limit: None,
            test_limit: None,
            max_train_per_client: None,
            max_test_per_client: None,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::invalid("n_clients", "must be >= 1"));
        }
        if !self.regime.is_balanced() && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be > 0"));
        }
        if self.regime.is_inter() {
            let domains = self.client_domains();
            let distinct = domains
                .iter()
                .enumerate()
                .filter(|(i, d)| !domains[..*i].contains(d))
                .count();
            if distinct < 2 {
                return Err(Error::invalid(
                    "domains",
                    "inter-domain regimes need at least 2 clients with distinct domains",
                ));
            }
        }
        Ok(())
    }

    /// Domain of each client (identity for intra regimes).
    pub fn client_domains(&self) -> Vec<DomainTransform> {
        if !self.regime.is_inter() {
            return vec![DomainTransform::Identity; self.n_clients];
        }
        let pool = if self.domains.is_empty() {
            DomainTransform::defaults()
        } else {
            self.domains.clone()
        };
        (0..self.n_clients).map(|i| pool[i % pool.len()].clone()).collect()
    }
}

/// One client's local data.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset<S> {
    pub id: usize,
    pub domain: DomainTransform,
    pub train: Dataset<S>,
    pub test: Dataset<S>,
    /// Rows of the base train / test sets this client received.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl<S: Scalar> ClientDataset<S> {
    pub fn class_counts(&self) -> Vec<usize> {
        self.train.class_counts()
    }
}

pub fn load_base<S: Scalar>(base: &BaseDataset, seed: u64) -> Result<SplitDataset<S>> {
    match base {
        BaseDataset::Synthetic {
            classes,
            input_dim,
            per_class,
            spread,
        } => synth_gaussians(*classes, *input_dim, *per_class, *spread, seed),
        BaseDataset::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    let mut test: Dataset<S> = load_idx(ti, tl)?;
                    let classes = train.num_classes.max(test.num_classes);
                    test.num_classes = classes;
                    let mut train = train;
                    train.num_classes = classes;
                    Ok(SplitDataset { train, test })
                }
                (None, None) => Ok(split_train_test(&train, seed.wrapping_add(SPLIT_SALT))),
                _ => Err(Error::invalid(
                    "test_images",
                    "test images and labels must be given together",
                )),
            }
        }
    }
}

/// Per class, drops the remainder and deals equal chunks to every client.
fn equal_split<R: Rng + ?Sized>(labels: &[usize], num_classes: usize, n_clients: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut clients = vec![Vec::new(); n_clients];
    let mut dropped = 0;
    for mut idx in class_indices(labels, num_classes) {
        idx.shuffle(rng);
        let m = idx.len() / n_clients;
        dropped += idx.len() - m * n_clients;
        for (i, c) in clients.iter_mut().enumerate() {
            c.extend_from_slice(&idx[i * m..(i + 1) * m]);
        }
    }
    if dropped > 0 {
        log::info!("equal split dropped {dropped} remainder samples");
    }
    for c in &mut clients {
        c.sort_unstable();
    }
    clients
}

fn truncate_to_equal<R: Rng + ?Sized>(clients: &mut [Vec<usize>], rng: &mut R) {
    let m = clients.iter().map(Vec::len).min().unwrap_or(0);
    let dropped: usize = clients.iter().map(|c| c.len() - m).sum();
    if dropped > 0 {
        log::info!("equalizing client sizes to {m} dropped {dropped} samples");
    }
    for c in clients.iter_mut() {
        *c = subsample(c, m, rng);
    }
}

fn partition_split<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    labels: &[usize],
    num_classes: usize,
    shares: &LabelShares,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let mut clients = match spec.regime {
        Regime::BalancedInter => equal_split(labels, num_classes, spec.n_clients, rng),
        _ => assign_by_shares(labels, shares, rng)?,
    };
    match spec.regime {
        Regime::BalancedIntra => truncate_to_equal(&mut clients, rng),
        Regime::ImbalancedIntra | Regime::ImbalancedInter => fill_empty_clients(&mut clients),
        Regime::BalancedInter => {}
    }
    Ok(clients)
}

/// Builds the client datasets described by `spec`, loading the base data.
pub fn build_scenario<S: Scalar>(spec: &ScenarioSpec) -> Result<Vec<ClientDataset<S>>> {
    spec.validate()?;
    let base = load_base(&spec.base, spec.seed)?;
    build_scenario_from(spec, &base)
}

/// Builds the client datasets from an already loaded base dataset.
///
/// Train and test sets are partitioned with the same per-class shares, so each
/// client's test labels follow its train labels.
pub fn build_scenario_from<S: Scalar>(spec: &ScenarioSpec, base: &SplitDataset<S>) -> Result<Vec<ClientDataset<S>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let num_classes = base.train.num_classes.max(base.test.num_classes);

    let all_train: Vec<usize> = (0..base.train.len()).collect();
    let all_test: Vec<usize> = (0..base.test.len()).collect();
    let train_pool = subsample(&all_train, spec.train_limit.unwrap_or(usize::MAX), &mut rng);
    let test_pool = subsample(&all_test, spec.test_limit.unwrap_or(usize::MAX), &mut rng);
    let train_labels: Vec<usize> = train_pool.iter().map(|&i| base.train.labels[i]).collect();
    let test_labels: Vec<usize> = test_pool.iter().map(|&i| base.test.labels[i]).collect();

    let shares = match spec.regime {
        Regime::BalancedIntra => preferred_class_shares(num_classes, spec.n_clients),
        Regime::BalancedInter => uniform_shares(num_classes, spec.n_clients),
        Regime::ImbalancedIntra | Regime::ImbalancedInter => {
            dirichlet_shares(num_classes, spec.n_clients, spec.alpha, &mut rng)?
        }
    };
    let mut train_parts = partition_split(spec, &train_labels, num_classes, &shares, &mut rng)?;
    let mut test_parts = partition_split(spec, &test_labels, num_classes, &shares, &mut rng)?;
    for (parts, cap) in [
        (&mut train_parts, spec.max_train_per_client),
        (&mut test_parts, spec.max_test_per_client),
    ] {
        if let Some(cap) = cap {
            for p in parts.iter_mut() {
                *p = subsample(p, cap, &mut rng);
            }
        }
    }

    let domains = spec.client_domains();
    let mut clients = Vec::with_capacity(spec.n_clients);
    for (id, ((train_pos, test_pos), domain)) in train_parts.iter().zip(&test_parts).zip(domains).enumerate() {
        let train_indices: Vec<usize> = train_pos.iter().map(|&p| train_pool[p]).collect();
        let test_indices: Vec<usize> = test_pos.iter().map(|&p| test_pool[p]).collect();
        let mut train = domain.apply(&base.train.subset(&train_indices));
        let mut test = domain.apply(&base.test.subset(&test_indices));
        train.num_classes = num_classes;
        test.num_classes = num_classes;
        clients.push(ClientDataset {
            id,
            domain,
            train,
            test,
            train_indices,
            test_indices,
        });
    }
    Ok(clients)
}
