use super::{FederatedDataset, Shard};
use crate::scalar::{norm_sq, Real};

/// Per-feature centering and scaling fitted on a training pool.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer<S> {
    mean: Vec<S>,
    /// Zero marks a constant feature, which is centered only.
    std: Vec<S>,
}

impl<S: Real> Standardizer<S> {
    pub fn fit(pool: &Shard<S>) -> Self {
        let d = pool.dim();
        let n = pool.len().max(1) as f64;
        let mut mean = vec![0.0f64; d];
        for (x, _) in pool.iter() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v.to_f64_lossy();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0f64; d];
        for (x, _) in pool.iter() {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                let c = v.to_f64_lossy() - m;
                *s += c * c;
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    S::of(s)
                } else {
                    S::zero()
                }
            })
            .collect();
        Self {
            mean: mean.into_iter().map(S::of).collect(),
            std,
        }
    }

    pub fn mean(&self) -> &[S] {
        &self.mean
    }

    pub fn std(&self) -> &[S] {
        &self.std
    }

    pub fn apply_row(&self, row: &mut [S]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v -= *m;
            if *s > S::zero() {
                *v /= *s;
            }
        }
    }

    pub fn apply(&self, shard: &mut Shard<S>) {
        for i in 0..shard.len() {
            self.apply_row(shard.row_mut(i));
        }
    }
}

/// Scales every nonzero row to unit ℓ2 norm. All-zero rows stay zero.
pub fn normalize_rows<S: Real>(shard: &mut Shard<S>) {
    for i in 0..shard.len() {
        let row = shard.row_mut(i);
        let n = norm_sq(row).sqrt();
        if n > S::zero() {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Standardizes with statistics of the pooled training split, then
/// normalizes each record, in train and test shards alike.
pub fn preprocess<S: Real>(mut data: FederatedDataset<S>) -> FederatedDataset<S> {
    let scaler = Standardizer::fit(&data.pooled_train());
    for u in data.users_mut() {
        for shard in [&mut u.train, &mut u.test] {
            scaler.apply(shard);
            normalize_rows(shard);
        }
    }
    data
}
