use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::Shard;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A fitted linear projection onto the top principal directions.
#[derive(Clone, Debug)]
pub struct Pca<S> {
    input_dim: usize,
    mean: Vec<S>,
    /// `k × input_dim`, one unit-norm component per row.
    components: Vec<S>,
    explained_variance: Vec<f64>,
}

impl<S: Real> Pca<S> {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn mean(&self) -> &[S] {
        &self.mean
    }

    pub fn component(&self, j: usize) -> &[S] {
        &self.components[j * self.input_dim..(j + 1) * self.input_dim]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Centered coordinates of `x` in the component basis.
    pub fn project(&self, x: &[S], out: &mut [S]) {
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = S::zero();
            for ((c, xi), m) in self.component(j).iter().zip(x).zip(&self.mean) {
                acc += *c * (*xi - *m);
            }
            *o = acc;
        }
    }

    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self, z: &[S], out: &mut [S]) {
        out.copy_from_slice(&self.mean);
        for (j, zj) in z.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.component(j)) {
                *o += *zj * *c;
            }
        }
    }

    pub fn transform(&self, shard: &Shard<S>) -> Shard<S> {
        shard.map_rows(self.output_dim(), |x, out| self.project(x, out))
    }
}

/// Fits `k` principal components by eigendecomposition of the sample
/// covariance. Each component's largest-magnitude coordinate is positive.
pub fn pca_fit<S: Real>(samples: &Shard<S>, k: usize) -> Result<Pca<S>> {
    let d = samples.dim();
    if k > d {
        return Err(Error::Config(format!("requested {k} components from {d}-dimensional data")));
    }
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let n = samples.len();
    let mut mean = vec![0.0f64; d];
    for (x, _) in samples.iter() {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v.to_f64_lossy();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0f64; d];
    for (x, _) in samples.iter() {
        for ((c, v), m) in centered.iter_mut().zip(x).zip(&mean) {
            *c = v.to_f64_lossy() - m;
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(k * d);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| S::of(sign * v)));
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(Pca {
        input_dim: d,
        mean: mean.into_iter().map(S::of).collect(),
        components,
        explained_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn low_rank_shard(n: usize, d: usize, k: usize, seed: u64) -> Shard<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let offset: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut feats = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            for i in 0..d {
                feats.push(offset[i] + (0..k).map(|j| z[j] * basis[j * d + i]).sum::<f64>());
            }
        }
        Shard::new(d, feats, vec![0; n]).unwrap()
    }

    #[test]
    fn components_are_orthonormal_and_ordered() {
        let shard = low_rank_shard(200, 12, 12, 1);
        let pca = pca_fit(&shard, 6).unwrap();
        for a in 0..6 {
            for b in 0..6 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot(pca.component(a), pca.component(b)) - want).abs() <= 1e-8);
            }
            let c = pca.component(a);
            let pivot = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(pivot > 0.0);
        }
        let ev = pca.explained_variance();
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn subspace_data_reconstructs_exactly() {
        let shard = low_rank_shard(100, 10, 3, 2);
        let pca = pca_fit(&shard, 3).unwrap();
        let mut z = vec![0.0; 3];
        let mut back = vec![0.0; 10];
        for (x, _) in shard.iter() {
            pca.project(x, &mut z);
            pca.reconstruct(&z, &mut back);
            let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-8, "{err}");
        }
    }

    #[test]
    fn too_many_components_rejected() {
        let shard = low_rank_shard(10, 4, 2, 3);
        assert!(pca_fit(&shard, 5).is_err());
    }
}
