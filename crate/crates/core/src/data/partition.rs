use rand::seq::SliceRandom;

use super::{FederatedDataset, Shard, UserData, TRAIN_FRACTION};
use crate::error::{config, Result};
use crate::rng::{sample_without_replacement, Phase, Purpose, Streams};
use crate::scalar::Real;

/// Empirical label distribution of a shard.
pub fn label_histogram<S: Real>(shard: &Shard<S>, classes: usize) -> Vec<f64> {
    let mut h = vec![0.0; classes];
    for &l in shard.labels() {
        h[l as usize] += 1.0;
    }
    let n = shard.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Seeded uniform subsample of `n` records, kept in pool order.
pub fn subsample_pool<S: Real>(pool: &Shard<S>, n: usize, seed: u64) -> Result<Shard<S>> {
    if n > pool.len() {
        return Err(config(format!("cannot subsample {n} records from a pool of {}", pool.len())));
    }
    let mut rng = Streams::new(seed).get(Phase::Data, 0, 0, 0, Purpose::Partition);
    let mut idx = sample_without_replacement(&mut rng, pool.len(), n);
    idx.sort_unstable();
    Ok(pool.select(&idx))
}

/// Splits a labeled pool across `users`.
///
/// Each user gets `⌊N/M⌋` records: a `gamma_pct` share drawn from a random
/// slice of the pool and dealt round-robin after sorting by label (so the
/// share follows the global label mix), and the rest as one contiguous
/// block of the label-sorted remainder. Records beyond `M⌊N/M⌋` are dropped.
/// Each user's records are shuffled before the train/test split.
pub fn partition_by_similarity<S: Real>(
    pool: &Shard<S>,
    users: usize,
    gamma_pct: f64,
    classes: usize,
    seed: u64,
) -> Result<FederatedDataset<S>> {
    if users == 0 {
        return Err(config("need at least one user"));
    }
    if !(0.0..=100.0).contains(&gamma_pct) {
        return Err(config("gamma must lie in [0, 100]"));
    }
    let per_user = pool.len() / users;
    if per_user == 0 {
        return Err(config("fewer records than users"));
    }
    let streams = Streams::new(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut streams.get(Phase::Data, 0, 0, 0, Purpose::Partition));
    order.truncate(per_user * users);

    let iid_per_user = ((gamma_pct / 100.0) * per_user as f64).round() as usize;
    let (iid, rest) = order.split_at_mut(iid_per_user * users);
    iid.sort_by_key(|&i| pool.labels()[i]);
    rest.sort_by_key(|&i| pool.labels()[i]);

    let block = per_user - iid_per_user;
    let mut assigned: Vec<Vec<usize>> = vec![Vec::with_capacity(per_user); users];
    for (k, &i) in iid.iter().enumerate() {
        assigned[k % users].push(i);
    }
    for (u, chunk) in rest.chunks_exact(block.max(1)).enumerate().take(users) {
        if block > 0 {
            assigned[u].extend_from_slice(chunk);
        }
    }

    let mut out = Vec::with_capacity(users);
    for (u, mut idx) in assigned.into_iter().enumerate() {
        idx.shuffle(&mut streams.get(Phase::Data, 1, u as u64, 0, Purpose::Partition));
        let (train, test) = pool.select(&idx).split_at_fraction(TRAIN_FRACTION);
        out.push(UserData { train, test });
    }
    FederatedDataset::new(out, pool.dim(), classes)
}
