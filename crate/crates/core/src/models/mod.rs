//! Loss and gradient oracles for federated classification.
//!
//! Parameters are flat vectors. The regularizer is kept apart from the data
//! term so that clipping and noise act on data-dependent gradients only.

mod gradcheck;
mod logreg;
mod mlp;
mod pca;

pub use gradcheck::{finite_difference_grad, max_relative_error, relative_error};
pub use logreg::LogReg;
pub use mlp::{Mlp, HIDDEN_UNITS, PCA_COMPONENTS};
pub use pca::{pca_fit, Pca};

use rand::Rng;

use crate::data::Shard;
use crate::error::{Error, Result};
use crate::scalar::{norm_sq, Real};

/// Default ℓ2 regularization weight.
pub const DEFAULT_L2: f64 = 5e-3;

pub trait Model<S: Real>: Send + Sync {
    fn num_params(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    /// Whether the regularized objective is convex in the parameters.
    fn is_convex(&self) -> bool;

    /// Class scores for one input.
    fn logits(&self, params: &[S], x: &[S], out: &mut [S]);

    /// Cross-entropy of one example without the regularizer. Writes the
    /// gradient into `grad` (overwriting it).
    fn data_loss_grad(&self, params: &[S], x: &[S], label: usize, grad: &mut [S]) -> S;

    fn reg_loss(&self, params: &[S]) -> S;

    /// Adds the regularizer gradient to `grad`.
    fn add_reg_grad(&self, params: &[S], grad: &mut [S]);

    fn init_params(&self, rng: &mut dyn rand::RngCore) -> Vec<S>;

    /// Regularized loss and gradient of a single example.
    fn per_example_loss_grad(&self, params: &[S], x: &[S], label: usize) -> Result<(S, Vec<S>)> {
        self.check(params, x, label)?;
        let mut grad = vec![S::zero(); self.num_params()];
        let loss = self.data_loss_grad(params, x, label, &mut grad) + self.reg_loss(params);
        self.add_reg_grad(params, &mut grad);
        Ok((loss, grad))
    }

    /// Regularized loss of a single example.
    fn per_example_loss(&self, params: &[S], x: &[S], label: usize) -> S {
        let mut logits = vec![S::zero(); self.num_classes()];
        self.logits(params, x, &mut logits);
        cross_entropy(&logits, label) + self.reg_loss(params)
    }

    /// Sum over `indices` of per-example data gradients, each clipped to
    /// ℓ2 norm `clip`. Unclipped norms are appended to `norms`.
    fn clipped_grad_sum(
        &self,
        params: &[S],
        shard: &Shard<S>,
        indices: &[usize],
        clip: S,
        sum: &mut [S],
        norms: &mut Vec<S>,
    ) {
        let mut grad = vec![S::zero(); self.num_params()];
        for &i in indices {
            self.data_loss_grad(params, shard.row(i), shard.label(i), &mut grad);
            let norm = norm_sq(&grad).sqrt();
            norms.push(norm);
            let scale = S::one() / S::one().max(norm / clip);
            for (s, g) in sum.iter_mut().zip(&grad) {
                *s += *g * scale;
            }
        }
    }

    /// Full gradient of the regularized mean loss over a shard.
    fn full_grad(&self, params: &[S], shard: &Shard<S>) -> Result<(S, Vec<S>)> {
        if shard.is_empty() {
            return Err(Error::Empty("shard"));
        }
        let mut grad = vec![S::zero(); self.num_params()];
        let mut example = vec![S::zero(); self.num_params()];
        let mut loss = S::zero();
        for (x, y) in shard.iter() {
            loss += self.data_loss_grad(params, x, y, &mut example);
            for (g, e) in grad.iter_mut().zip(&example) {
                *g += *e;
            }
        }
        let n = S::of(shard.len() as f64);
        for g in grad.iter_mut() {
            *g /= n;
        }
        self.add_reg_grad(params, &mut grad);
        Ok((loss / n + self.reg_loss(params), grad))
    }

    fn check(&self, params: &[S], x: &[S], label: usize) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if label >= self.num_classes() {
            return Err(Error::Label {
                label,
                classes: self.num_classes(),
            });
        }
        Ok(())
    }
}

/// In-place softmax; returns `log Σ exp(z)`.
pub fn softmax_in_place<S: Real>(z: &mut [S]) -> S {
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

/// `-log softmax(z)[label]`, computed stably.
pub fn cross_entropy<S: Real>(logits: &[S], label: usize) -> S {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let sum: S = logits.iter().map(|v| (*v - max).exp()).sum();
    max + sum.ln() - logits[label]
}

/// Index of the largest score; ties go to the smallest index.
pub fn argmax<S: Real>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean regularized per-example loss over a shard.
pub fn batch_loss<S: Real, M: Model<S> + ?Sized>(model: &M, params: &[S], shard: &Shard<S>) -> Result<S> {
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    let mut logits = vec![S::zero(); model.num_classes()];
    let mut total = S::zero();
    for (x, y) in shard.iter() {
        model.logits(params, x, &mut logits);
        total += cross_entropy(&logits, y);
    }
    Ok(total / S::of(shard.len() as f64) + model.reg_loss(params))
}

/// Number of correctly classified records in a shard.
pub fn correct_count<S: Real, M: Model<S> + ?Sized>(model: &M, params: &[S], shard: &Shard<S>) -> usize {
    let mut logits = vec![S::zero(); model.num_classes()];
    shard
        .iter()
        .filter(|(x, y)| {
            model.logits(params, x, &mut logits);
            argmax(&logits) == *y
        })
        .count()
}

/// Argmax-prediction accuracy over a shard.
pub fn accuracy<S: Real, M: Model<S> + ?Sized>(model: &M, params: &[S], shard: &Shard<S>) -> Result<f64> {
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    Ok(correct_count(model, params, shard) as f64 / shard.len() as f64)
}

pub(crate) fn uniform_init<S: Real>(rng: &mut dyn rand::RngCore, fan_in: usize, out: &mut [S]) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in out.iter_mut() {
        *v = S::of(rng.random_range(-bound..bound));
    }
}
