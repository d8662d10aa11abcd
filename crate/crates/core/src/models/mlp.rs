use super::{cross_entropy, softmax_in_place, uniform_init, Model, Pca};
use crate::scalar::{dot, Real};

/// Width of the hidden layer.
pub const HIDDEN_UNITS: usize = 200;
/// Dimension of the fixed projection in front of the network.
pub const PCA_COMPONENTS: usize = 60;

/// One-hidden-layer rectifier network with softmax output and an optional
/// fixed linear projection applied to the raw input.
///
/// Parameter layout: `W1` (`hidden × k`), `b1`, `W2` (`classes × hidden`),
/// `b2`, where `k` is the projected dimension. Weights only are penalized.
#[derive(Clone, Debug)]
pub struct Mlp<S> {
    projection: Option<Pca<S>>,
    features: usize,
    hidden: usize,
    classes: usize,
    l2: S,
}

impl<S: Real> Mlp<S> {
    /// Network on already-projected inputs of dimension `features`.
    pub fn new(features: usize, hidden: usize, classes: usize, l2: S) -> Self {
        Self {
            projection: None,
            features,
            hidden,
            classes,
            l2,
        }
    }

    /// Network that projects raw inputs through `pca` first.
    pub fn with_projection(pca: Pca<S>, hidden: usize, classes: usize, l2: S) -> Self {
        Self {
            features: pca.output_dim(),
            projection: Some(pca),
            hidden,
            classes,
            l2,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.features;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.classes * self.hidden;
        (w1, b1, w2)
    }

    fn project<'a>(&self, x: &'a [S], buf: &'a mut Vec<S>) -> &'a [S] {
        match &self.projection {
            Some(p) => {
                buf.resize(self.features, S::zero());
                p.project(x, buf);
                buf
            }
            None => x,
        }
    }

    /// Hidden pre-activations and output logits.
    fn forward(&self, params: &[S], z: &[S], pre: &mut [S], out: &mut [S]) {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w1 = &params[..w1_end];
        let b1 = &params[w1_end..b1_end];
        let w2 = &params[b1_end..w2_end];
        let b2 = &params[w2_end..];
        for (h, p) in pre.iter_mut().enumerate() {
            *p = dot(&w1[h * self.features..(h + 1) * self.features], z) + b1[h];
        }
        for (c, o) in out.iter_mut().enumerate() {
            let row = &w2[c * self.hidden..(c + 1) * self.hidden];
            let mut acc = b2[c];
            for (w, p) in row.iter().zip(pre.iter()) {
                if *p > S::zero() {
                    acc += *w * *p;
                }
            }
            *o = acc;
        }
    }
}

impl<S: Real> Model<S> for Mlp<S> {
    fn num_params(&self) -> usize {
        self.offsets().2 + self.classes
    }

    fn input_dim(&self) -> usize {
        self.projection.as_ref().map_or(self.features, |p| p.input_dim())
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn is_convex(&self) -> bool {
        false
    }

    fn logits(&self, params: &[S], x: &[S], out: &mut [S]) {
        let mut buf = Vec::new();
        let z = self.project(x, &mut buf);
        let mut pre = vec![S::zero(); self.hidden];
        self.forward(params, z, &mut pre, out);
    }

    fn data_loss_grad(&self, params: &[S], x: &[S], label: usize, grad: &mut [S]) -> S {
        let mut buf = Vec::new();
        let z = self.project(x, &mut buf);
        let mut pre = vec![S::zero(); self.hidden];
        let mut p = vec![S::zero(); self.classes];
        self.forward(params, z, &mut pre, &mut p);
        let loss = cross_entropy(&p, label);
        softmax_in_place(&mut p);
        p[label] -= S::one();

        let (w1_end, b1_end, w2_end) = self.offsets();
        let w2 = &params[b1_end..w2_end];
        let (g_first, g_second) = grad.split_at_mut(b1_end);
        let (gw2, gb2) = g_second.split_at_mut(w2_end - b1_end);
        let mut dh = vec![S::zero(); self.hidden];
        for (c, r) in p.iter().enumerate() {
            let row = &w2[c * self.hidden..(c + 1) * self.hidden];
            let grow = &mut gw2[c * self.hidden..(c + 1) * self.hidden];
            for h in 0..self.hidden {
                let act = pre[h].max(S::zero());
                grow[h] = *r * act;
                dh[h] += *r * row[h];
            }
            gb2[c] = *r;
        }
        let (gw1, gb1) = g_first.split_at_mut(w1_end);
        for h in 0..self.hidden {
            let d = if pre[h] > S::zero() { dh[h] } else { S::zero() };
            for (g, zi) in gw1[h * self.features..(h + 1) * self.features].iter_mut().zip(z) {
                *g = d * *zi;
            }
            gb1[h] = d;
        }
        loss
    }

    fn reg_loss(&self, params: &[S]) -> S {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w1 = &params[..w1_end];
        let w2 = &params[b1_end..w2_end];
        self.l2 * (dot(w1, w1) + dot(w2, w2)) / S::of(2.0)
    }

    fn add_reg_grad(&self, params: &[S], grad: &mut [S]) {
        let (w1_end, b1_end, w2_end) = self.offsets();
        for r in [0..w1_end, b1_end..w2_end] {
            for (g, w) in grad[r.clone()].iter_mut().zip(&params[r]) {
                *g += self.l2 * *w;
            }
        }
    }

    fn init_params(&self, rng: &mut dyn rand::RngCore) -> Vec<S> {
        let (w1_end, b1_end, _) = self.offsets();
        let mut params = vec![S::zero(); self.num_params()];
        let (first, second) = params.split_at_mut(b1_end);
        uniform_init(rng, self.features, first);
        uniform_init(rng, self.hidden, second);
        debug_assert_eq!(first.len() - w1_end, self.hidden);
        params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Shard;
    use crate::models::{finite_difference_grad, pca_fit, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Mlp::new(6, 8, 4, 5e-3);
        for _ in 0..50 {
            let params = m.init_params(&mut rng);
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = rng.random_range(0..4);
            let (_, g) = m.per_example_loss_grad(&params, &x, y).unwrap();
            let fd = finite_difference_grad(|p| m.per_example_loss(p, &x, y), &params, 1e-5);
            assert!(relative_error(&g, &fd) <= 1e-5);
        }
    }

    #[test]
    fn projected_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats: Vec<f64> = (0..50 * 10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let shard = Shard::new(10, feats, vec![0; 50]).unwrap();
        let m = Mlp::with_projection(pca_fit(&shard, 4).unwrap(), 7, 3, 5e-3);
        assert_eq!(m.input_dim(), 10);
        let params = m.init_params(&mut rng);
        let x = shard.row(3).to_vec();
        let (_, g) = m.per_example_loss_grad(&params, &x, 2).unwrap();
        let fd = finite_difference_grad(|p| m.per_example_loss(p, &x, 2), &params, 1e-5);
        assert!(relative_error(&g, &fd) <= 1e-5);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let m = Mlp::<f64>::new(60, HIDDEN_UNITS, 10, 0.0);
        let params = m.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let (w1_end, b1_end, _) = m.offsets();
        assert!(params[..b1_end].iter().all(|v| v.abs() <= 1.0 / 60f64.sqrt()));
        assert!(params[b1_end..].iter().all(|v| v.abs() <= 1.0 / (HIDDEN_UNITS as f64).sqrt()));
        assert!(params[w1_end..b1_end].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn forward_is_linear_between_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::new(5, 16, 3, 0.0);
        let params = m.init_params(&mut rng);
        let mut checked = 0;
        for _ in 0..200 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dir: Vec<f64> = (0..5).map(|_| rng.random_range(-0.05..0.05)).collect();
            let b: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + d).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let signs = |x: &[f64]| {
                let mut pre = vec![0.0; 16];
                let mut out = vec![0.0; 3];
                m.forward(&params, x, &mut pre, &mut out);
                (pre.iter().map(|p| *p > 0.0).collect::<Vec<_>>(), out)
            };
            let (sa, la) = signs(&a);
            let (sb, lb) = signs(&b);
            if sa != sb {
                continue;
            }
            let (_, lm) = signs(&mid);
            for c in 0..3 {
                assert!((lm[c] - 0.5 * (la[c] + lb[c])).abs() < 1e-12);
            }
            checked += 1;
        }
        assert!(checked > 100);
    }
}
