use rand::Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One affine map `z = x Wᵀ + b`, with `W` stored as `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S> {
    pub weight: Tensor2<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Layer<S> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor2::zeros(output, input),
            bias: vec![S::zero(); output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn entries(&self) -> impl Iterator<Item = &S> {
        self.weight.as_slice().iter().chain(self.bias.iter())
    }

    fn entries_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.weight
            .as_mut_slice()
            .iter_mut()
            .chain(self.bias.iter_mut())
    }
}

/// Layer sizes of the MLP: `input -> hidden.. -> embedding -> classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 3);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.embedding_dim);
        dims.push(self.num_classes);
        dims
    }
}

/// Weights of the feature extractor (every layer but the last, each followed
/// by ReLU) and the linear classifier head (the last layer).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    layers: Vec<Layer<S>>,
}

/// Derivatives of a scalar loss with respect to every entry of a [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    layers: Vec<Layer<S>>,
}

fn check_chain<S: Scalar>(layers: &[Layer<S>]) -> Result<()> {
    if layers.len() < 2 {
        return Err(Error::shape(
            "ModelParams",
            "at least 2 layers (extractor + classifier)",
            layers.len(),
        ));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.bias.len() != l.output_dim() {
            return Err(Error::shape("layer bias", l.output_dim(), l.bias.len()));
        }
        if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
            return Err(Error::shape(
                "layer chain",
                layers[i - 1].output_dim(),
                l.input_dim(),
            ));
        }
    }
    Ok(())
}

impl<S: Scalar> ModelParams<S> {
    pub fn from_layers(layers: Vec<Layer<S>>) -> Result<Self> {
        check_chain(&layers)?;
        Ok(Self { layers })
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Self {
        let dims = arch.dims();
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                for v in layer.weight.as_mut_slice() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = S::of(z * std);
                }
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let dims = arch.dims();
        Self {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Number of layers in the feature extractor.
    pub fn extractor_depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn embedding_dim(&self) -> usize {
        self.layers[self.extractor_depth()].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Flat view in layer order (weights then bias per layer).
    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.layers.iter().flat_map(Layer::entries)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers.iter_mut().flat_map(Layer::entries_mut)
    }

    pub fn same_shape(&self, other_layers: &[Layer<S>]) -> bool {
        self.layers.len() == other_layers.len()
            && self.layers.iter().zip(other_layers).all(|(a, b)| {
                a.weight.rows() == b.weight.rows()
                    && a.weight.cols() == b.weight.cols()
                    && a.bias.len() == b.bias.len()
            })
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(params: &ModelParams<S>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.layers.iter().flat_map(Layer::entries)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers.iter_mut().flat_map(Layer::entries_mut)
    }
}

/// Cached activations of one forward pass.
///
/// `activations[0]` is the input batch, `activations[l + 1]` the output of
/// layer `l`; the extractor outputs are post-ReLU, the last entry holds the
/// logits.
#[derive(Clone, Debug)]
pub struct ForwardPass<S> {
    activations: Vec<Tensor2<S>>,
}

impl<S: Scalar> ForwardPass<S> {
    pub fn features(&self) -> &Tensor2<S> {
        &self.activations[self.activations.len() - 2]
    }

    pub fn logits(&self) -> &Tensor2<S> {
        &self.activations[self.activations.len() - 1]
    }

    pub fn into_outputs(mut self) -> (Tensor2<S>, Tensor2<S>) {
        let logits = self.activations.pop().expect("logits");
        let features = self.activations.pop().expect("features");
        (features, logits)
    }
}

pub fn forward_pass<S: Scalar>(params: &ModelParams<S>, batch: &Tensor2<S>) -> Result<ForwardPass<S>> {
    if batch.cols() != params.input_dim() {
        return Err(Error::shape("forward input", params.input_dim(), batch.cols()));
    }
    let depth = params.extractor_depth();
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(batch.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = activations[l].matmul_t(&layer.weight)?;
        for r in 0..z.rows() {
            for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        if l < depth {
            z.map_inplace(|v| if v > S::zero() { v } else { S::zero() });
        }
        if !z.is_finite() {
            return Err(Error::NonFinite { layer: l });
        }
        activations.push(z);
    }
    Ok(ForwardPass { activations })
}

/// Runs the network, returning `(features, logits)`.
pub fn forward<S: Scalar>(params: &ModelParams<S>, batch: &Tensor2<S>) -> Result<(Tensor2<S>, Tensor2<S>)> {
    Ok(forward_pass(params, batch)?.into_outputs())
}

/// Row-wise softmax.
pub fn softmax<S: Scalar>(logits: &Tensor2<S>) -> Tensor2<S> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn cross_entropy<S: Scalar>(logits: &Tensor2<S>, labels: &[usize]) -> Result<(S, Tensor2<S>)> {
    let n = logits.rows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != n {
        return Err(Error::shape("labels", n, labels.len()));
    }
    let classes = logits.cols();
    let probs = softmax(logits);
    let inv_n = S::one() / S::of_usize(n);
    let mut total = S::zero();
    let mut grad = probs;
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Label { label: y, classes });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        total += lse - row[y];
        let g = grad.row_mut(r);
        g[y] -= S::one();
        for v in g.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Extra objective defined on the embeddings only. Its gradient is chained
/// through the feature extractor by [`loss_and_grads`].
pub trait EmbeddingLoss<S: Scalar>: Sync {
    fn evaluate(&self, features: &Tensor2<S>, labels: &[usize]) -> Result<EmbeddingTerm<S>>;
}

/// Value of an embedding loss and `∂value/∂features`.
#[derive(Clone, Debug)]
pub struct EmbeddingTerm<S> {
    pub value: S,
    pub grad: Tensor2<S>,
    /// Samples for which the term was undefined and contributed zero.
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown<S> {
    pub total: S,
    pub cross_entropy: S,
    pub extras: Vec<S>,
    pub skipped: Vec<usize>,
}

struct Backward<S> {
    grads: Gradients<S>,
    input_grad: Option<Tensor2<S>>,
}

fn backward<S: Scalar>(
    params: &ModelParams<S>,
    pass: &ForwardPass<S>,
    d_logits: Tensor2<S>,
    d_features: Option<&Tensor2<S>>,
    want_input: bool,
) -> Result<Backward<S>> {
    let depth = params.extractor_depth();
    let mut grads = Gradients::zeros_like(params);
    let mut delta = d_logits;
    let mut input_grad = None;
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input = &pass.activations[l];
        let g = &mut grads.layers[l];
        g.weight = delta.t_matmul(input)?;
        for r in 0..delta.rows() {
            for (b, &d) in g.bias.iter_mut().zip(delta.row(r)) {
                *b += d;
            }
        }
        if l == 0 && !want_input {
            break;
        }
        let mut d_input = delta.matmul(&layer.weight)?;
        if l == depth {
            if let Some(extra) = d_features {
                for (v, &e) in d_input.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                    *v += e;
                }
            }
        }
        if l == 0 {
            input_grad = Some(d_input);
            break;
        }
        // input of layer l >= 1 is a ReLU output
        for (v, &a) in d_input.as_mut_slice().iter_mut().zip(input.as_slice()) {
            if a <= S::zero() {
                *v = S::zero();
            }
        }
        delta = d_input;
    }
    Ok(Backward { grads, input_grad })
}

fn objective<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Tensor2<S>,
    labels: &[usize],
    extras: &[&dyn EmbeddingLoss<S>],
    want_input: bool,
) -> Result<(LossBreakdown<S>, Backward<S>)> {
    if batch.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let pass = forward_pass(params, batch)?;
    let (ce, d_logits) = cross_entropy(pass.logits(), labels)?;
    let mut breakdown = LossBreakdown {
        total: ce,
        cross_entropy: ce,
        extras: Vec::with_capacity(extras.len()),
        skipped: Vec::with_capacity(extras.len()),
    };
    let mut d_features: Option<Tensor2<S>> = None;
    for term in extras {
        let t = term.evaluate(pass.features(), labels)?;
        if t.grad.rows() != batch.rows() || t.grad.cols() != params.embedding_dim() {
            return Err(Error::shape(
                "embedding loss gradient",
                format!("{}x{}", batch.rows(), params.embedding_dim()),
                format!("{}x{}", t.grad.rows(), t.grad.cols()),
            ));
        }
        breakdown.total += t.value;
        breakdown.extras.push(t.value);
        breakdown.skipped.push(t.skipped);
        match d_features.as_mut() {
            None => d_features = Some(t.grad),
            Some(acc) => {
                for (a, &g) in acc.as_mut_slice().iter_mut().zip(t.grad.as_slice()) {
                    *a += g;
                }
            }
        }
    }
    let back = backward(params, &pass, d_logits, d_features.as_ref(), want_input)?;
    Ok((breakdown, back))
}

/// Mean cross-entropy plus every extra embedding loss, with exact gradients
/// with respect to all parameters.
pub fn loss_and_grads<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Tensor2<S>,
    labels: &[usize],
    extras: &[&dyn EmbeddingLoss<S>],
) -> Result<(LossBreakdown<S>, Gradients<S>)> {
    let (loss, back) = objective(params, batch, labels, extras, false)?;
    Ok((loss, back.grads))
}

/// Same objective as [`loss_and_grads`], differentiated with respect to the input batch.
pub fn input_gradient<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Tensor2<S>,
    labels: &[usize],
    extras: &[&dyn EmbeddingLoss<S>],
) -> Result<(LossBreakdown<S>, Tensor2<S>)> {
    let (loss, back) = objective(params, batch, labels, extras, true)?;
    Ok((loss, back.input_grad.expect("input gradient requested")))
}

/// Returns `params - lr * grads`.
pub fn sgd_step<S: Scalar>(params: &ModelParams<S>, grads: &Gradients<S>, lr: S) -> Result<ModelParams<S>> {
    if !params.same_shape(&grads.layers) {
        return Err(Error::shape("sgd_step", "gradients congruent with params", "mismatch"));
    }
    let mut next = params.clone();
    for (p, &g) in next.iter_mut().zip(grads.iter()) {
        *p -= lr * g;
    }
    Ok(next)
}

/// Index of the largest logit per row; ties resolve to the lowest index.
pub fn predict<S: Scalar>(logits: &Tensor2<S>) -> Vec<usize> {
    logits
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
