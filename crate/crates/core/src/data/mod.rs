//! Federated datasets: synthetic generation, similarity-controlled
//! partitioning of labeled pools, preprocessing and file formats.

mod idx;
mod partition;
mod preprocess;
mod store;
mod synth;

pub use idx::{
    load_idx, read_idx_images, read_idx_labels, save_idx, write_idx_images, write_idx_labels, IdxImages, IMAGES_MAGIC,
    LABELS_MAGIC,
};
pub use partition::{label_histogram, partition_by_similarity, subsample_pool, total_variation};
pub use preprocess::{normalize_rows, preprocess, Standardizer};
pub use store::{export_csv, read_dataset, write_dataset, DatasetHeader, DATASET_MAGIC, DATASET_VERSION};
pub use synth::{feature_variances, synth_generate, synth_generate_with_truth, GroundTruth, SynthConfig};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Fraction of each user's records assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Row-major block of labeled feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard<S> {
    dim: usize,
    features: Vec<S>,
    labels: Vec<u32>,
}

impl<S: Real> Shard<S> {
    pub fn new(dim: usize, features: Vec<S>, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Dimension {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn push(&mut self, row: &[S], label: u32) {
        assert_eq!(row.len(), self.dim, "row dimension");
        self.features.extend_from_slice(row);
        self.labels.push(label);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[S], usize)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().map(|l| *l as usize))
    }

    /// Records at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.dim);
        for &i in indices {
            out.push(self.row(i), self.labels[i]);
        }
        out
    }

    pub fn concat<'a>(dim: usize, parts: impl IntoIterator<Item = &'a Shard<S>>) -> Self {
        let mut out = Self::empty(dim);
        for p in parts {
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        out
    }

    pub fn map_rows<T: Real>(&self, out_dim: usize, mut f: impl FnMut(&[S], &mut [T])) -> Shard<T> {
        let mut features = vec![T::zero(); out_dim * self.len()];
        for (i, dst) in features.chunks_exact_mut(out_dim).enumerate() {
            f(self.row(i), dst);
        }
        Shard {
            dim: out_dim,
            features,
            labels: self.labels.clone(),
        }
    }

    /// Leading `round(fraction * len)` records and the rest.
    pub fn split_at_fraction(&self, fraction: f64) -> (Self, Self) {
        let n_train = (fraction * self.len() as f64).round() as usize;
        let head: Vec<usize> = (0..n_train).collect();
        let tail: Vec<usize> = (n_train..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserData<S> {
    pub train: Shard<S>,
    pub test: Shard<S>,
}

/// Per-user train/test shards over a shared feature space.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedDataset<S> {
    users: Vec<UserData<S>>,
    dim: usize,
    classes: usize,
}

impl<S: Real> FederatedDataset<S> {
    pub fn new(users: Vec<UserData<S>>, dim: usize, classes: usize) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Empty("federated dataset"));
        }
        for u in &users {
            for shard in [&u.train, &u.test] {
                if shard.dim() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: shard.dim(),
                    });
                }
                if let Some(&l) = shard.labels().iter().find(|l| **l as usize >= classes) {
                    return Err(Error::Label {
                        label: l as usize,
                        classes,
                    });
                }
            }
        }
        Ok(Self {
            users,
            dim,
            classes,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn users(&self) -> &[UserData<S>] {
        &self.users
    }

    pub fn user(&self, i: usize) -> &UserData<S> {
        &self.users[i]
    }

    pub fn users_mut(&mut self) -> &mut [UserData<S>] {
        &mut self.users
    }

    /// Smallest per-user training shard size.
    pub fn train_records(&self) -> usize {
        self.users.iter().map(|u| u.train.len()).min().unwrap_or(0)
    }

    pub fn pooled_train(&self) -> Shard<S> {
        Shard::concat(self.dim, self.users.iter().map(|u| &u.train))
    }

    pub fn pooled_test(&self) -> Shard<S> {
        Shard::concat(self.dim, self.users.iter().map(|u| &u.test))
    }

    /// Applies a row transform to every shard, e.g. a PCA projection.
    pub fn map_features<T: Real>(&self, out_dim: usize, f: impl Fn(&[S], &mut [T])) -> FederatedDataset<T> {
        FederatedDataset {
            users: self
                .users
                .iter()
                .map(|u| UserData {
                    train: u.train.map_rows(out_dim, &f),
                    test: u.test.map_rows(out_dim, &f),
                })
                .collect(),
            dim: out_dim,
            classes: self.classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shard_rows_and_selection() {
        let s = Shard::new(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0, 1, 2]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.row(1), &[3.0, 4.0]);
        let sel = s.select(&[2, 0]);
        assert_eq!(sel.labels(), &[2, 0]);
        assert_eq!(sel.row(0), &[5.0, 6.0]);
        assert!(Shard::new(2, vec![1.0f64; 3], vec![0, 1]).is_err());
        let (a, b) = s.split_at_fraction(0.8);
        assert_eq!((a.len(), b.len()), (2, 1));
    }

    #[test]
    fn dataset_rejects_out_of_range_labels() {
        let shard = Shard::new(1, vec![0.0f64], vec![3]).unwrap();
        let user = UserData {
            train: shard.clone(),
            test: shard,
        };
        assert!(matches!(
            FederatedDataset::new(vec![user], 1, 3),
            Err(Error::Label { label: 3, classes: 3 })
        ));
    }
}
