//! Seeded labeled / unlabeled / test partitions.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::synthetic::sample_seed;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

impl SplitPlan {
    /// Train-pool size.
    pub fn train_len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }
}

/// `floor(ratio · n)`, at least one.
pub fn labeled_count(n_train: usize, ratio: f64) -> usize {
    ((ratio * n_train as f64 + 1e-9).floor() as usize).clamp(1, n_train)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("labeled ratio {ratio} outside (0, 1]")));
    }
    Ok(())
}

fn shuffled(ids: &mut [usize], seed: u64, stream: u64) {
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(seed, stream)));
}

/// Split train indices `0..n_train` into labeled and unlabeled. Larger ratios
/// extend the labeled set of smaller ones under the same seed.
pub fn make_split(n_train: usize, ratio: f64, seed: u64) -> Result<SplitPlan> {
    check_ratio(ratio)?;
    if n_train == 0 {
        return Err(Error::Empty("train pool".into()));
    }
    let mut ids: Vec<usize> = (0..n_train).collect();
    shuffled(&mut ids, seed, 1);
    let k = labeled_count(n_train, ratio);
    let mut labeled = ids[..k].to_vec();
    let mut unlabeled = ids[k..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(SplitPlan {
        labeled,
        unlabeled,
        test: Vec::new(),
        ratio,
        seed,
    })
}

/// Partition `0..n_total`: `n_test` test indices chosen from the seed alone, the
/// rest split by `ratio`.
pub fn make_split_with_test(n_total: usize, n_test: usize, ratio: f64, seed: u64) -> Result<SplitPlan> {
    check_ratio(ratio)?;
    if n_test >= n_total {
        return Err(Error::InvalidConfig(format!(
            "test size {n_test} leaves no training samples out of {n_total}"
        )));
    }
    let mut ids: Vec<usize> = (0..n_total).collect();
    shuffled(&mut ids, seed, 0);
    let mut test = ids[..n_test].to_vec();
    test.sort_unstable();
    let mut pool = ids[n_test..].to_vec();
    pool.sort_unstable();
    let inner = make_split(pool.len(), ratio, seed)?;
    Ok(SplitPlan {
        labeled: inner.labeled.iter().map(|&i| pool[i]).collect(),
        unlabeled: inner.unlabeled.iter().map(|&i| pool[i]).collect(),
        test,
        ratio,
        seed,
    })
}
