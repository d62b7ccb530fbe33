//! Dense arithmetic, the two-part MLP with hand-derived gradients, and SGD.

mod network;
mod similarity;
mod tensor;

pub use network::{
    cross_entropy, forward, forward_pass, input_gradient, loss_and_grads, predict, sgd_step,
    softmax, Architecture, EmbeddingLoss, EmbeddingTerm, ForwardPass, Gradients, Layer,
    LossBreakdown, ModelParams,
};
pub(crate) use similarity::cosine_from_norms;
pub use similarity::{cosine_grad, cosine_sim, cosine_sim_checked, Cosine, DEGENERATE_NORM};
pub use tensor::{dot, mean_of, norm, Tensor2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Optimisation knobs for local training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<S> {
    pub learning_rate: S,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub temperature: S,
    pub seed: u64,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        Self {
            learning_rate: S::of(0.01),
            batch_size: 64,
            local_epochs: 1,
            temperature: S::of(0.07),
            seed: 1,
        }
    }
}

impl<S: Scalar> TrainConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= S::zero()) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be finite and >= 0"));
        }
        if !(self.temperature > S::zero()) {
            return Err(Error::invalid("temperature", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::invalid("local_epochs", "must be >= 1"));
        }
        Ok(())
    }
}
