//! ℓ∞-bounded input attacks (FGSM / PGD) and the adversarially trained objective.

use rand::Rng;

use crate::contrast::{active_terms, summarize, Ablation, ContrastContext, TotalLoss};
use crate::error::{Error, Result};
use crate::numerics::{forward, input_gradient, loss_and_grads, predict, EmbeddingLoss, Gradients, ModelParams, Tensor2};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig<S> {
    /// Radius of the ℓ∞ ball around the clean input.
    pub epsilon: S,
    pub step_size: S,
    pub steps: usize,
    /// Valid input range; every perturbed input is clamped into it.
    pub clamp: (S, S),
    /// Start from a uniform point in the ball instead of the clean input.
    pub random_start: bool,
}

impl<S: Scalar> AttackConfig<S> {
    /// Single full-size signed-gradient step.
    pub fn fgsm(epsilon: S) -> Self {
        Self {
            epsilon,
            step_size: epsilon,
            steps: 1,
            clamp: (S::zero(), S::one()),
            random_start: false,
        }
    }

    pub fn pgd(epsilon: S, step_size: S, steps: usize) -> Self {
        Self {
            epsilon,
            step_size,
            steps,
            clamp: (S::zero(), S::one()),
            random_start: true,
        }
    }

    /// Training-time default: ε = 0.3, step 0.01, 40 steps.
    pub fn training_default() -> Self {
        Self::pgd(S::of(0.3), S::of(0.01), 40)
    }

    /// Evaluation PGD with `steps` iterations and step size `2.5 ε / steps`.
    pub fn pgd_eval(epsilon: S, steps: usize) -> Self {
        Self::pgd(epsilon, S::of(2.5) * epsilon / S::of_usize(steps.max(1)), steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= S::zero()) {
            return Err(Error::invalid("eps", "must be >= 0"));
        }
        // zero is allowed so that a zero radius (and its derived step) is a no-op
        if !(self.step_size >= S::zero()) {
            return Err(Error::invalid("attack_alpha", "must be >= 0"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("attack_steps", "must be >= 1"));
        }
        if !(self.clamp.0 <= self.clamp.1) {
            return Err(Error::invalid("clamp", "lower bound above upper bound"));
        }
        Ok(())
    }
}

/// Objective the attack ascends.
#[derive(Clone, Copy)]
pub enum AttackObjective<'a, S> {
    CrossEntropy,
    Total {
        ctx: &'a ContrastContext<S>,
        ablation: &'a Ablation<S>,
    },
}

fn objective_input_grad<S: Scalar>(
    params: &ModelParams<S>,
    batch: &Tensor2<S>,
    labels: &[usize],
    objective: AttackObjective<'_, S>,
) -> Result<Tensor2<S>> {
    match objective {
        AttackObjective::CrossEntropy => Ok(input_gradient(params, batch, labels, &[])?.1),
        AttackObjective::Total { ctx, ablation } => {
            let terms = active_terms(ctx, ablation);
            let extras: Vec<&dyn EmbeddingLoss<S>> = terms.iter().map(|t| t as &dyn EmbeddingLoss<S>).collect();
            Ok(input_gradient(params, batch, labels, &extras)?.1)
        }
    }
}

fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Projects `x` onto the ε-ball around `clean`, then into the clamp range.
fn project<S: Scalar>(x: &mut [S], clean: &[S], atk: &AttackConfig<S>) {
    let (lo, hi) = atk.clamp;
    for (v, &c) in x.iter_mut().zip(clean) {
        let delta = (*v - c).max(-atk.epsilon).min(atk.epsilon);
        *v = (c + delta).max(lo).min(hi);
    }
}

/// Projected signed-gradient ascent inside the ε-ball. With `steps = 1`,
/// `step_size = ε` and no random start this is FGSM.
pub fn pgd_perturb<S: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<S>,
    batch: &Tensor2<S>,
    labels: &[usize],
    atk: &AttackConfig<S>,
    objective: AttackObjective<'_, S>,
    rng: &mut R,
) -> Result<Tensor2<S>> {
    atk.validate()?;
    let clean = batch.as_slice();
    let mut adv = batch.clone();
    if atk.epsilon == S::zero() {
        return Ok(adv);
    }
    if atk.random_start {
        let eps = atk.epsilon.as_f64();
        for v in adv.as_mut_slice() {
            *v += S::of(rng.random_range(-eps..=eps));
        }
        project(adv.as_mut_slice(), clean, atk);
    }
    for _ in 0..atk.steps {
        let grad = objective_input_grad(params, &adv, labels, objective)?;
        for (v, &g) in adv.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *v += atk.step_size * sign(g);
        }
        project(adv.as_mut_slice(), clean, atk);
    }
    Ok(adv)
}

/// Robust objective: cross-entropy and both contrast terms evaluated on the
/// adversarial inputs, contrasted against signals from clean data. The attack
/// maximises cross-entropy and is held fixed while differentiating.
pub fn adversarial_total_loss<S: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<S>,
    batch: &Tensor2<S>,
    labels: &[usize],
    ctx: &ContrastContext<S>,
    ablation: &Ablation<S>,
    atk: &AttackConfig<S>,
    rng: &mut R,
) -> Result<(TotalLoss<S>, Gradients<S>, Tensor2<S>)> {
    let adv = pgd_perturb(params, batch, labels, atk, AttackObjective::CrossEntropy, rng)?;
    let terms = active_terms(ctx, ablation);
    let extras: Vec<&dyn EmbeddingLoss<S>> = terms.iter().map(|t| t as &dyn EmbeddingLoss<S>).collect();
    let (breakdown, grads) = loss_and_grads(params, &adv, labels, &extras)?;
    Ok((summarize(&terms, &breakdown), grads, adv))
}

/// White-box accuracy on perturbed inputs, attacking in chunks of `chunk` rows.
pub fn evaluate_under_attack<S: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<S>,
    features: &Tensor2<S>,
    labels: &[usize],
    atk: &AttackConfig<S>,
    chunk: usize,
    rng: &mut R,
) -> Result<f64> {
    let n = features.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let chunk = chunk.max(1);
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for part in idx.chunks(chunk) {
        let x = features.select_rows(part);
        let y: Vec<usize> = part.iter().map(|&i| labels[i]).collect();
        let adv = pgd_perturb(params, &x, &y, atk, AttackObjective::CrossEntropy, rng)?;
        let (_, logits) = forward(params, &adv)?;
        correct += predict(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / n as f64)
}
