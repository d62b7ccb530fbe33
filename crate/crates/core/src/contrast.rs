//! Contrastive terms pulling each embedding toward same-class signals and
//! away from the other classes' signals.
//!
//! For a query `e` with label `y` and a bank of labelled signals `z_k`:
//!
//! ```text
//! s_k  = cos(e, z_k) / τ
//! loss = logsumexp_k(s_k) - logsumexp_{k : label(z_k) = y}(s_k)
//! ```
//!
//! The local term uses every pooled local signal as the bank; the global term
//! uses one global signal per class.

use crate::error::{Error, Result};
use crate::numerics::{
    cosine_from_norms, cosine_grad, loss_and_grads, norm, EmbeddingLoss, EmbeddingTerm,
    Gradients, LossBreakdown, ModelParams, Tensor2,
};
use crate::scalar::Scalar;
use crate::signals::{ClassSignalPool, GlobalSignalTable};

/// Flat list of labelled signal vectors with cached norms.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalBank<S> {
    vectors: Vec<Vec<S>>,
    norms: Vec<S>,
    labels: Vec<usize>,
}

impl<S: Scalar> SignalBank<S> {
    pub fn new(entries: Vec<(usize, Vec<S>)>) -> Self {
        let mut vectors = Vec::with_capacity(entries.len());
        let mut labels = Vec::with_capacity(entries.len());
        for (label, v) in entries {
            labels.push(label);
            vectors.push(v);
        }
        let norms = vectors.iter().map(|v| norm(v)).collect();
        Self {
            vectors,
            norms,
            labels,
        }
    }

    pub fn from_pool(pool: &ClassSignalPool<S>) -> Self {
        Self::new(
            pool.per_class
                .iter()
                .enumerate()
                .flat_map(|(c, signals)| signals.iter().map(move |s| (c, s.vector.clone())))
                .collect(),
        )
    }

    pub fn from_table(table: &GlobalSignalTable<S>) -> Self {
        Self::new(
            table
                .signals
                .iter()
                .enumerate()
                .filter_map(|(c, s)| s.clone().map(|v| (c, v)))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(Vec::len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContrastStatus {
    Scored,
    /// No signal carries the query's label; loss and gradient are zero.
    NoPositives,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastOutcome<S> {
    pub loss: S,
    pub grad: Vec<S>,
    pub status: ContrastStatus,
}

/// Contrastive loss of one query against a bank, with its gradient with
/// respect to the query.
pub fn contrast_loss<S: Scalar>(
    query: &[S],
    label: usize,
    bank: &SignalBank<S>,
    temperature: S,
) -> ContrastOutcome<S> {
    let dim = query.len();
    if !bank.labels.contains(&label) {
        return ContrastOutcome {
            loss: S::zero(),
            grad: vec![S::zero(); dim],
            status: ContrastStatus::NoPositives,
        };
    }
    let qn = norm(query);
    let logits: Vec<S> = bank
        .vectors
        .iter()
        .zip(&bank.norms)
        .map(|(z, &zn)| cosine_from_norms(query, qn, z, zn).value / temperature)
        .collect();
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let weights: Vec<S> = logits.iter().map(|&s| (s - max).exp()).collect();
    let total: S = weights.iter().copied().sum();
    let positive: S = weights
        .iter()
        .zip(&bank.labels)
        .filter(|(_, &l)| l == label)
        .map(|(&w, _)| w)
        .sum();
    let all_positive = bank.labels.iter().all(|&l| l == label);
    let loss = if all_positive {
        S::zero()
    } else {
        (total.ln() - positive.ln()).max(S::zero())
    };

    let mut grad = vec![S::zero(); dim];
    if !all_positive {
        // ∂loss/∂s_k = softmax_all(k) - [k ∈ P] softmax_P(k)
        for ((z, &w), &l) in bank.vectors.iter().zip(&weights).zip(&bank.labels) {
            let mut coeff = w / total;
            if l == label {
                coeff -= w / positive;
            }
            if coeff != S::zero() {
                cosine_grad(query, z, coeff / temperature, &mut grad);
            }
        }
    }
    ContrastOutcome {
        loss,
        grad,
        status: ContrastStatus::Scored,
    }
}

/// Which contrastive terms enter the objective, with their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ablation<S> {
    pub use_local: bool,
    pub use_global: bool,
    pub local_weight: S,
    pub global_weight: S,
}

impl<S: Scalar> Ablation<S> {
    pub fn both() -> Self {
        Self {
            use_local: true,
            use_global: true,
            local_weight: S::one(),
            global_weight: S::one(),
        }
    }

    pub fn none() -> Self {
        Self {
            use_local: false,
            use_global: false,
            ..Self::both()
        }
    }
}

impl<S: Scalar> Default for Ablation<S> {
    fn default() -> Self {
        Self::both()
    }
}

/// Signals from the previous round that the current round contrasts against.
#[derive(Clone, Debug)]
pub struct ContrastContext<S> {
    pub local_pool: Option<ClassSignalPool<S>>,
    pub global_table: Option<GlobalSignalTable<S>>,
    pub temperature: S,
    local_bank: Option<SignalBank<S>>,
    global_bank: Option<SignalBank<S>>,
}

impl<S: Scalar> ContrastContext<S> {
    /// Context before any signals exist; every contrast term is zero.
    pub fn empty(temperature: S) -> Self {
        Self {
            local_pool: None,
            global_table: None,
            temperature,
            local_bank: None,
            global_bank: None,
        }
    }

    pub fn new(
        local_pool: Option<ClassSignalPool<S>>,
        global_table: Option<GlobalSignalTable<S>>,
        temperature: S,
    ) -> Result<Self> {
        if !(temperature > S::zero()) {
            return Err(Error::invalid("temperature", "must be > 0"));
        }
        let local_bank = local_pool
            .as_ref()
            .map(SignalBank::from_pool)
            .filter(|b| !b.is_empty());
        let global_bank = global_table
            .as_ref()
            .map(SignalBank::from_table)
            .filter(|b| !b.is_empty());
        Ok(Self {
            local_pool,
            global_table,
            temperature,
            local_bank,
            global_bank,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.local_bank.is_none() && self.global_bank.is_none()
    }

    pub fn local_bank(&self) -> Option<&SignalBank<S>> {
        self.local_bank.as_ref()
    }

    pub fn global_bank(&self) -> Option<&SignalBank<S>> {
        self.global_bank.as_ref()
    }
}

fn no_signals<S: Scalar>(dim: usize) -> ContrastOutcome<S> {
    ContrastOutcome {
        loss: S::zero(),
        grad: vec![S::zero(); dim],
        status: ContrastStatus::NoPositives,
    }
}

/// Contrast against every pooled local signal of every class.
pub fn local_contrast_loss<S: Scalar>(embedding: &[S], label: usize, ctx: &ContrastContext<S>) -> ContrastOutcome<S> {
    match &ctx.local_bank {
        Some(bank) => contrast_loss(embedding, label, bank, ctx.temperature),
        None => no_signals(embedding.len()),
    }
}

/// Contrast against the per-class global signals.
pub fn global_contrast_loss<S: Scalar>(embedding: &[S], label: usize, ctx: &ContrastContext<S>) -> ContrastOutcome<S> {
    match &ctx.global_bank {
        Some(bank) => contrast_loss(embedding, label, bank, ctx.temperature),
        None => no_signals(embedding.len()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContrastKind {
    Local,
    Global,
}

/// Batch-mean contrast term, usable as an extra loss on the embeddings.
pub struct ContrastTerm<'a, S> {
    pub ctx: &'a ContrastContext<S>,
    pub kind: ContrastKind,
    pub weight: S,
}

impl<S: Scalar> EmbeddingLoss<S> for ContrastTerm<'_, S> {
    fn evaluate(&self, features: &Tensor2<S>, labels: &[usize]) -> Result<EmbeddingTerm<S>> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let bank = match self.kind {
            ContrastKind::Local => self.ctx.local_bank(),
            ContrastKind::Global => self.ctx.global_bank(),
        };
        if let Some(d) = bank.and_then(SignalBank::dim) {
            if d != features.cols() {
                return Err(Error::shape("signal dimension", features.cols(), d));
            }
        }
        let scale = self.weight / S::of_usize(n);
        let mut grad = Tensor2::zeros(n, features.cols());
        let mut value = S::zero();
        let mut skipped = 0;
        for (i, (row, &y)) in features.row_iter().zip(labels).enumerate() {
            let out = match self.kind {
                ContrastKind::Local => local_contrast_loss(row, y, self.ctx),
                ContrastKind::Global => global_contrast_loss(row, y, self.ctx),
            };
            if out.status == ContrastStatus::NoPositives {
                skipped += 1;
                continue;
            }
            value += out.loss;
            for (g, &o) in grad.row_mut(i).iter_mut().zip(&out.grad) {
                *g = o * scale;
            }
        }
        Ok(EmbeddingTerm {
            value: value * scale,
            grad,
            skipped,
        })
    }
}

/// Loss components of the combined objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TotalLoss<S> {
    pub total: S,
    pub cross_entropy: S,
    pub local: S,
    pub global: S,
    pub skipped_local: usize,
    pub skipped_global: usize,
}

/// Cross-entropy plus the enabled contrast terms; gradients reach every
/// parameter through the feature extractor.
pub fn total_loss<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Tensor2<S>,
    labels: &[usize],
    ctx: &ContrastContext<S>,
    ablation: &Ablation<S>,
) -> Result<(TotalLoss<S>, Gradients<S>)> {
    let terms = active_terms(ctx, ablation);
    let extras: Vec<&dyn EmbeddingLoss<S>> = terms.iter().map(|t| t as &dyn EmbeddingLoss<S>).collect();
    let (breakdown, grads) = loss_and_grads(params, batch, labels, &extras)?;
    Ok((summarize(&terms, &breakdown), grads))
}

pub(crate) fn active_terms<'a, S: Scalar>(ctx: &'a ContrastContext<S>, ablation: &Ablation<S>) -> Vec<ContrastTerm<'a, S>> {
    let mut terms = Vec::with_capacity(2);
    if ablation.use_local && ablation.local_weight != S::zero() && ctx.local_bank().is_some() {
        terms.push(ContrastTerm {
            ctx,
            kind: ContrastKind::Local,
            weight: ablation.local_weight,
        });
    }
    if ablation.use_global && ablation.global_weight != S::zero() && ctx.global_bank().is_some() {
        terms.push(ContrastTerm {
            ctx,
            kind: ContrastKind::Global,
            weight: ablation.global_weight,
        });
    }
    terms
}

pub(crate) fn summarize<S: Scalar>(terms: &[ContrastTerm<'_, S>], b: &LossBreakdown<S>) -> TotalLoss<S> {
    let mut out = TotalLoss {
        total: b.total,
        cross_entropy: b.cross_entropy,
        ..TotalLoss::default()
    };
    for ((term, &v), &s) in terms.iter().zip(&b.extras).zip(&b.skipped) {
        match term.kind {
            ContrastKind::Local => {
                out.local = v;
                out.skipped_local = s;
            }
            ContrastKind::Global => {
                out.global = v;
                out.skipped_global = s;
            }
        }
    }
    out
}
