//! Epoch batch plans.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_seed, SplitPlan};
use crate::error::{Error, Result};

/// Dataset indices of one batch with their labeled flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub indices: Vec<usize>,
    pub labeled: Vec<bool>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled.iter().filter(|&&l| l).count()
    }
}

/// Steps in one epoch: `ceil(pool / batch_size)` over the pool the variant uses.
pub fn steps_per_epoch(plan: &SplitPlan, batch_size: usize, semi_supervised: bool) -> usize {
    let pool = if semi_supervised {
        plan.train_len()
    } else {
        plan.labeled.len()
    };
    pool.div_ceil(batch_size.max(1))
}

/// Batches for one epoch. Supervised mode uses labeled samples only. In mixed
/// mode with `labeled_per_batch = None` every batch takes labeled samples in
/// proportion to the pool sizes, and at least one while any labeled samples
/// remain. With `Some(k)` every batch holds `k` labeled samples, cycling
/// through reshuffled copies of the labeled pool, and is filled up with
/// unlabeled samples the same way; the batch count stays `ceil(pool / batch_size)`.
pub fn compose_batches(
    plan: &SplitPlan,
    batch_size: usize,
    semi_supervised: bool,
    labeled_per_batch: Option<usize>,
    seed: u64,
    epoch: usize,
) -> Result<Vec<BatchPlan>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    if plan.labeled.is_empty() {
        return Err(Error::Empty("labeled pool".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed ^ 0xBA7C_4E5, epoch as u64));
    let mut labeled = plan.labeled.clone();
    labeled.shuffle(&mut rng);
    if !semi_supervised || plan.unlabeled.is_empty() {
        return Ok(labeled
            .chunks(batch_size)
            .map(|c| BatchPlan {
                indices: c.to_vec(),
                labeled: vec![true; c.len()],
            })
            .collect());
    }
    if let Some(k) = labeled_per_batch {
        return Ok(fixed_share(plan, labeled, batch_size, k, &mut rng));
    }
    let mut unlabeled = plan.unlabeled.clone();
    unlabeled.shuffle(&mut rng);

    let (nl, nu) = (labeled.len(), unlabeled.len());
    let n = nl + nu;
    let nb = n.div_ceil(batch_size);
    let (mut used_l, mut used_u) = (0, 0);
    let mut out = Vec::with_capacity(nb);
    for j in 0..nb {
        let size = (j + 1) * n / nb - j * n / nb;
        let left = nb - j - 1;
        let mut l = ((j + 1) * nl / nb).saturating_sub(used_l);
        if l == 0 && used_l < nl {
            l = 1;
        }
        l = l.min(nl - used_l).min(size);
        let u = (size - l).min(nu - used_u);
        let l = if left == 0 { nl - used_l } else { size - u };
        let u = if left == 0 { nu - used_u } else { u };
        let mut indices = labeled[used_l..used_l + l].to_vec();
        indices.extend_from_slice(&unlabeled[used_u..used_u + u]);
        let mut flags = vec![true; l];
        flags.resize(l + u, false);
        used_l += l;
        used_u += u;
        out.push(BatchPlan {
            indices,
            labeled: flags,
        });
    }
    debug_assert_eq!((used_l, used_u), (nl, nu));
    Ok(out)
}

fn cycled(pool: &[usize], first: Vec<usize>, need: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = first;
    while out.len() < need {
        let mut next = pool.to_vec();
        next.shuffle(rng);
        out.extend(next);
    }
    out.truncate(need);
    out
}

fn fixed_share(
    plan: &SplitPlan,
    labeled: Vec<usize>,
    batch_size: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<BatchPlan> {
    let nb = plan.train_len().div_ceil(batch_size);
    let l = k.clamp(1, batch_size.saturating_sub(1).max(1)).min(plan.labeled.len());
    let u = (batch_size - l).min(plan.unlabeled.len());
    let mut unlabeled = plan.unlabeled.clone();
    unlabeled.shuffle(rng);
    let ls = cycled(&plan.labeled, labeled, nb * l, rng);
    let us = cycled(&plan.unlabeled, unlabeled, nb * u, rng);
    (0..nb)
        .map(|j| {
            let mut indices = ls[j * l..(j + 1) * l].to_vec();
            indices.extend_from_slice(&us[j * u..(j + 1) * u]);
            let mut flags = vec![true; l];
            flags.resize(l + u, false);
            BatchPlan { indices, labeled: flags }
        })
        .collect()
}
