//! Label-share matrices and the assignment of sample indices to clients.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rand::SeedableRng;

use crate::error::{Error, Result};

/// `shares[c][i]`: fraction of class `c` that client `i` receives. Rows sum to 1.
pub type LabelShares = Vec<Vec<f64>>;

/// One symmetric Dirichlet draw per class.
pub fn dirichlet_shares<R: Rng + ?Sized>(
    num_classes: usize,
    n_clients: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<LabelShares> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients", "must be >= 1"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid("alpha", "must be a positive finite number"));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid("alpha", e.to_string()))?;
    let mut shares = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let draws: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            shares.push(draws.iter().map(|g| g / sum).collect());
        } else {
            // every gamma draw underflowed; put the class on one client
            let mut row = vec![0.0; n_clients];
            row[rng.random_range(0..n_clients)] = 1.0;
            shares.push(row);
        }
    }
    Ok(shares)
}

/// Every client gets the same share of every class.
pub fn uniform_shares(num_classes: usize, n_clients: usize) -> LabelShares {
    vec![vec![1.0 / n_clients as f64; n_clients]; num_classes]
}

/// Each client weights two preferred classes three times as heavily as the rest.
pub fn preferred_class_shares(num_classes: usize, n_clients: usize) -> LabelShares {
    let mut weights = vec![vec![1.0; n_clients]; num_classes];
    if num_classes > 0 {
        for i in 0..n_clients {
            for c in [(2 * i) % num_classes, (2 * i + 1) % num_classes] {
                weights[c][i] = 3.0;
            }
        }
    }
    for row in &mut weights {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= s);
    }
    weights
}

/// Indices of each class, in ascending order.
pub fn class_indices(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        out[y].push(i);
    }
    out
}

/// Shuffles each class and cuts it at the cumulative shares. Every index is
/// assigned exactly once; client lists come back sorted.
pub fn assign_by_shares<R: Rng + ?Sized>(
    labels: &[usize],
    shares: &LabelShares,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let num_classes = shares.len();
    let n_clients = shares.first().map_or(0, Vec::len);
    if n_clients == 0 {
        return Err(Error::invalid("n_clients", "must be >= 1"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Label {
            label: bad,
            classes: num_classes,
        });
    }
    let mut clients = vec![Vec::new(); n_clients];
    for (class, mut idx) in class_indices(labels, num_classes).into_iter().enumerate() {
        idx.shuffle(rng);
        let n = idx.len();
        let mut cum = 0.0;
        let mut start = 0;
        for (i, &share) in shares[class].iter().enumerate() {
            cum += share;
            let end = if i + 1 == n_clients {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            clients[i].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(clients)
}

/// Moves one sample from the currently largest client to each empty client.
pub fn fill_empty_clients(clients: &mut [Vec<usize>]) {
    for i in 0..clients.len() {
        if !clients[i].is_empty() {
            continue;
        }
        let donor = (0..clients.len())
            .max_by_key(|&j| (clients[j].len(), std::cmp::Reverse(j)))
            .expect("at least one client");
        if clients[donor].len() < 2 {
            log::warn!("not enough samples to give client {i} any data");
            continue;
        }
        let moved = clients[donor].pop().expect("donor has samples");
        log::debug!("client {i} received no samples; moved index {moved} from client {donor}");
        clients[i].push(moved);
    }
}

/// Label-skewed split: per-class Dirichlet(α) shares over clients.
pub fn dirichlet_partition(labels: &[usize], n_clients: usize, alpha: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients", "must be >= 1"));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shares = dirichlet_shares(num_classes, n_clients, alpha, &mut rng)?;
    let mut clients = assign_by_shares(labels, &shares, &mut rng)?;
    fill_empty_clients(&mut clients);
    for c in &mut clients {
        c.sort_unstable();
    }
    Ok(clients)
}

/// Keeps `keep` of the indices, chosen uniformly, returned sorted.
pub fn subsample<R: Rng + ?Sized>(indices: &[usize], keep: usize, rng: &mut R) -> Vec<usize> {
    if keep >= indices.len() {
        return indices.to_vec();
    }
    let mut v = indices.to_vec();
    v.shuffle(rng);
    v.truncate(keep);
    v.sort_unstable();
    v
}
