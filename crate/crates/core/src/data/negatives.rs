use std::collections::{BTreeMap, HashSet};

use rand::Rng;

use crate::autodiff::derived_rng;
use crate::data::ReasoningSample;
use crate::error::{Error, Result};

/// RNG stream id for evaluation negatives.
const EVAL_STREAM: u64 = 0x6576_616c;

/// `n` distinct items drawn uniformly from the items the user never
/// interacted with. `interacted` must be sorted.
pub fn sample_negatives<R: Rng + ?Sized>(
    interacted: &[usize],
    n_items: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let available = n_items - interacted.len();
    if available < n {
        return Err(Error::InvalidArgument(format!(
            "only {available} non-interacted items, {n} negatives requested"
        )));
    }
    if available <= 2 * n {
        // dense case: partial Fisher–Yates over the complement
        let mut pool: Vec<usize> = (0..n_items)
            .filter(|i| interacted.binary_search(i).is_err())
            .collect();
        for k in 0..n {
            let j = rng.random_range(k..pool.len());
            pool.swap(k, j);
        }
        pool.truncate(n);
        return Ok(pool);
    }
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let c = rng.random_range(0..n_items);
        if interacted.binary_search(&c).is_err() && seen.insert(c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// One fixed set of evaluation negatives per user, drawn from a per-user
/// stream derived from the seed, so every model variant is ranked against
/// the same candidates regardless of evaluation order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeCache {
    pub seed: u64,
    pub per_user: BTreeMap<usize, Vec<usize>>,
}

impl NegativeCache {
    pub fn build(
        samples: &[ReasoningSample],
        user_items: &[Vec<usize>],
        n_items: usize,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut per_user = BTreeMap::new();
        for s in samples {
            if per_user.contains_key(&s.user) {
                continue;
            }
            let mut rng = derived_rng(seed, EVAL_STREAM, s.user as u64);
            per_user.insert(s.user, sample_negatives(&user_items[s.user], n_items, n, &mut rng)?);
        }
        Ok(NegativeCache { seed, per_user })
    }

    pub fn get(&self, user: usize) -> Option<&[usize]> {
        self.per_user.get(&user).map(Vec::as_slice)
    }
}
