use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{preprocess, FederatedDataset, Shard, UserData, TRAIN_FRACTION};
use crate::error::{config, Result};
use crate::rng::{Phase, Purpose, Streams};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub records: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Variance of the per-user model means.
    pub alpha: f64,
    /// Variance of the per-user feature means.
    pub beta: f64,
    #[serde(default = "default_flip")]
    pub flip_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_dim() -> usize {
    40
}

fn default_classes() -> usize {
    10
}

fn default_flip() -> f64 {
    0.05
}

impl SynthConfig {
    pub fn new(users: usize, records: usize, alpha: f64, beta: f64, seed: u64) -> Self {
        Self {
            users,
            records,
            dim: default_dim(),
            classes: default_classes(),
            alpha,
            beta,
            flip_prob: default_flip(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.records == 0 || self.dim == 0 {
            return Err(config("users, records and dim must be positive"));
        }
        if self.classes < 2 {
            return Err(config("need at least two classes"));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(config("alpha and beta must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.flip_prob) {
            return Err(config("flip_prob must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-user labeling models, kept for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// `classes × dim` per user, class-major.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Fraction of labels that were flipped.
    pub flip_rate: f64,
}

/// Diagonal feature covariance `j^{-1.2}`, `j = 1..=dim`.
pub fn feature_variances(dim: usize) -> Vec<f64> {
    (1..=dim).map(|j| (j as f64).powf(-1.2)).collect()
}

pub fn synth_generate<S: Real>(cfg: &SynthConfig) -> Result<FederatedDataset<S>> {
    synth_generate_with_truth(cfg).map(|(d, _)| d)
}

pub fn synth_generate_with_truth<S: Real>(cfg: &SynthConfig) -> Result<(FederatedDataset<S>, GroundTruth)> {
    cfg.validate()?;
    let (d, l) = (cfg.dim, cfg.classes);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let alpha_sd = cfg.alpha.sqrt();
    let beta_sd = cfg.beta.sqrt();
    let feat_sd: Vec<f64> = feature_variances(d).into_iter().map(f64::sqrt).collect();
    let streams = Streams::new(cfg.seed);

    let mut truth = GroundTruth {
        weights: Vec::with_capacity(cfg.users),
        biases: Vec::with_capacity(cfg.users),
        flip_rate: 0.0,
    };
    let mut flips = 0usize;
    let mut users = Vec::with_capacity(cfg.users);
    for user in 0..cfg.users {
        let mut rng = streams.get(Phase::Data, 0, user as u64, 0, Purpose::Generate);
        let mut z = || std_normal.sample(&mut rng);
        let weights: Vec<f64> = (0..l * d).map(|_| alpha_sd * z() + z()).collect();
        let biases: Vec<f64> = (0..l).map(|_| alpha_sd * z() + z()).collect();
        let centers: Vec<f64> = (0..d).map(|_| beta_sd * z() + z()).collect();
        drop(z);

        let mut features = Vec::with_capacity(cfg.records * d);
        let mut labels = Vec::with_capacity(cfg.records);
        let mut x = vec![0.0f64; d];
        for _ in 0..cfg.records {
            for ((xi, c), s) in x.iter_mut().zip(&centers).zip(&feat_sd) {
                *xi = c + s * std_normal.sample(&mut rng);
            }
            let scores = (0..l).map(|c| {
                weights[c * d..(c + 1) * d].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + biases[c]
            });
            let mut label = scores
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, s)| if s > best.1 { (c, s) } else { best })
                .0;
            if rng.random::<f64>() < cfg.flip_prob {
                let r = rng.random_range(0..l - 1);
                label = if r >= label { r + 1 } else { r };
                flips += 1;
            }
            features.extend(x.iter().map(|v| S::of(*v)));
            labels.push(label as u32);
        }
        let shard = Shard::new(d, features, labels)?;
        let (train, test) = shard.split_at_fraction(TRAIN_FRACTION);
        users.push(UserData { train, test });
        truth.weights.push(weights);
        truth.biases.push(biases);
    }
    truth.flip_rate = flips as f64 / (cfg.users * cfg.records) as f64;
    let data = preprocess(FederatedDataset::new(users, d, l)?);
    Ok((data, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::norm_sq;

    #[test]
    fn covariance_diagonal_values() {
        let v = feature_variances(40);
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 0.435275281648062).abs() < 1e-12);
        assert!((v[39] - 0.011954406247375).abs() < 1e-12);
    }

    #[test]
    fn same_config_same_data() {
        let cfg = SynthConfig::new(4, 50, 1.0, 1.0, 42);
        let a: FederatedDataset<f64> = synth_generate(&cfg).unwrap();
        let b: FederatedDataset<f64> = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c: FederatedDataset<f64> = synth_generate(&SynthConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_and_norms() {
        let cfg = SynthConfig::new(5, 30, 0.0, 0.0, 1);
        let data: FederatedDataset<f64> = synth_generate(&cfg).unwrap();
        let total: usize = data.users().iter().map(|u| u.train.len() + u.test.len()).sum();
        assert_eq!(total, 150);
        assert!(data.users().iter().all(|u| u.train.len() == 24 && u.test.len() == 6));
        for (x, _) in data.pooled_train().iter().chain(data.pooled_test().iter()) {
            assert!((norm_sq(x).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_knobs_still_give_distinct_users() {
        let cfg = SynthConfig::new(3, 20, 0.0, 0.0, 9);
        let (data, truth) = synth_generate_with_truth::<f64>(&cfg).unwrap();
        assert_ne!(truth.weights[0], truth.weights[1]);
        assert_ne!(data.user(0).train.features(), data.user(1).train.features());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SynthConfig::new(3, 20, -1.0, 0.0, 9);
        assert!(synth_generate::<f64>(&cfg).is_err());
        cfg.alpha = 0.0;
        cfg.flip_prob = 1.0;
        assert!(synth_generate::<f64>(&cfg).is_err());
    }
}
