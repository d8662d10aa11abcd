use super::{cross_entropy, softmax_in_place, Model};
use crate::data::Shard;
use crate::scalar::{dot, Real};

/// Multinomial logistic regression with ℓ2 penalty on the weights only.
///
/// Parameter layout: the `classes × input_dim` weight matrix, class-major,
/// followed by the `classes` biases.
#[derive(Clone, Debug)]
pub struct LogReg<S> {
    input_dim: usize,
    classes: usize,
    l2: S,
}

impl<S: Real> LogReg<S> {
    pub fn new(input_dim: usize, classes: usize, l2: S) -> Self {
        Self {
            input_dim,
            classes,
            l2,
        }
    }

    pub fn l2(&self) -> S {
        self.l2
    }

    fn weights_len(&self) -> usize {
        self.input_dim * self.classes
    }
}

impl<S: Real> Model<S> for LogReg<S> {
    fn num_params(&self) -> usize {
        self.weights_len() + self.classes
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn logits(&self, params: &[S], x: &[S], out: &mut [S]) {
        let (w, b) = params.split_at(self.weights_len());
        for (c, o) in out.iter_mut().enumerate() {
            *o = dot(&w[c * self.input_dim..(c + 1) * self.input_dim], x) + b[c];
        }
    }

    fn data_loss_grad(&self, params: &[S], x: &[S], label: usize, grad: &mut [S]) -> S {
        let mut p = vec![S::zero(); self.classes];
        self.logits(params, x, &mut p);
        let loss = cross_entropy(&p, label);
        softmax_in_place(&mut p);
        p[label] -= S::one();
        let (gw, gb) = grad.split_at_mut(self.weights_len());
        for (c, r) in p.iter().enumerate() {
            for (g, xi) in gw[c * self.input_dim..(c + 1) * self.input_dim].iter_mut().zip(x) {
                *g = *r * *xi;
            }
            gb[c] = *r;
        }
        loss
    }

    fn reg_loss(&self, params: &[S]) -> S {
        let w = &params[..self.weights_len()];
        self.l2 * dot(w, w) / S::of(2.0)
    }

    fn add_reg_grad(&self, params: &[S], grad: &mut [S]) {
        let n = self.weights_len();
        for (g, w) in grad[..n].iter_mut().zip(&params[..n]) {
            *g += self.l2 * *w;
        }
    }

    /// Zero initialization; the objective is convex.
    fn init_params(&self, _rng: &mut dyn rand::RngCore) -> Vec<S> {
        vec![S::zero(); self.num_params()]
    }

    /// Uses `‖(p - e_y) ⊗ [x; 1]‖ = ‖p - e_y‖ · sqrt(‖x‖² + 1)` so that the
    /// per-example gradient is never materialized.
    fn clipped_grad_sum(
        &self,
        params: &[S],
        shard: &Shard<S>,
        indices: &[usize],
        clip: S,
        sum: &mut [S],
        norms: &mut Vec<S>,
    ) {
        let mut r = vec![S::zero(); self.classes];
        let n = self.weights_len();
        for &i in indices {
            let x = shard.row(i);
            let y = shard.label(i);
            self.logits(params, x, &mut r);
            softmax_in_place(&mut r);
            r[y] -= S::one();
            let norm = (dot(&r, &r) * (dot(x, x) + S::one())).sqrt();
            norms.push(norm);
            let scale = S::one() / S::one().max(norm / clip);
            let (sw, sb) = sum.split_at_mut(n);
            for (c, rc) in r.iter().enumerate() {
                let coef = *rc * scale;
                for (s, xi) in sw[c * self.input_dim..(c + 1) * self.input_dim].iter_mut().zip(x) {
                    *s += coef * *xi;
                }
                sb[c] += coef;
            }
        }
    }
}
