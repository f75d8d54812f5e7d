use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::seeded_rng;
use crate::data::{Interaction, InteractionLog};
use crate::error::{Error, Result};

/// Random rating log for tests and smoke runs: every user rates
/// `per_user` distinct items, one to three days apart. Item popularity is
/// skewed towards low ids and ratings lean towards 4 for popular items so
/// there is some signal to learn.
pub fn synthetic_log(n_users: usize, n_items: usize, per_user: usize, seed: u64) -> Result<InteractionLog> {
    if per_user > n_items || n_users == 0 || per_user == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {per_user} of {n_items} items for {n_users} users"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(n_users * per_user);
    for u in 0..n_users {
        let mut ts = 880_000_000 + rng.random_range(0..86_400 * 30);
        let mut items: Vec<usize> = sample(&mut rng, n_items, per_user).into_vec();
        // bias towards popular (low-id) items
        for it in items.iter_mut() {
            if rng.random_bool(0.5) {
                *it /= 4;
            }
        }
        items.sort_unstable();
        items.dedup();
        while items.len() < per_user {
            let c = rng.random_range(0..n_items);
            if let Err(pos) = items.binary_search(&c) {
                items.insert(pos, c);
            }
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        for &k in &order {
            let item = items[k];
            let popular = item < n_items / 4;
            let rating = if rng.random_bool(if popular { 0.75 } else { 0.4 }) {
                rng.random_range(4..=5)
            } else {
                rng.random_range(1..=3)
            };
            out.push(Interaction::new(u, item, rating, ts));
            ts += 86_400 * rng.random_range(1..=3);
        }
    }
    InteractionLog::from_interactions(out, n_users, n_items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let a = synthetic_log(10, 50, 12, 3).unwrap();
        assert_eq!(a.n_interactions(), 120);
        assert!(a.user_item_sets().iter().all(|s| s.len() == 12));
        let b = synthetic_log(10, 50, 12, 3).unwrap();
        assert_eq!(a.per_user, b.per_user);
        assert!(synthetic_log(2, 5, 6, 0).is_err());
    }
}
