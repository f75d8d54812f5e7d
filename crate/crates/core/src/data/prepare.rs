use std::collections::BTreeMap;

use crate::data::{
    Dataset, DatasetMeta, Feedback, HistoryEvent, InteractionLog, Label, Polarity,
    ReasoningSample, SplitBundle,
};
use crate::error::{Error, Result};

pub const DAY_SECONDS: u64 = 86_400;
pub const DEFAULT_WINDOW: usize = 5;

/// Ratings 4–5 become positive events, 1–3 negative.
pub fn binarize_ratings(mut log: InteractionLog) -> Result<InteractionLog> {
    for it in log.per_user.iter_mut().flatten() {
        it.polarity = match it.rating {
            4 | 5 => Polarity::Positive,
            1..=3 => Polarity::Negative,
            r => {
                return Err(Error::InvalidArgument(format!(
                    "rating {r} of user {} on item {} outside 1..=5",
                    it.user, it.item
                )))
            }
        };
    }
    Ok(log)
}

/// `bucket = (timestamp − min timestamp) / granularity`, integer division.
pub fn bucketize_timestamps(mut log: InteractionLog, granularity: u64) -> Result<InteractionLog> {
    if granularity == 0 {
        return Err(Error::InvalidArgument("bucket granularity must be positive".into()));
    }
    let min = log.iter().map(|i| i.timestamp).min().unwrap_or(0);
    let mut max_bucket = 0;
    for it in log.per_user.iter_mut().flatten() {
        it.bucket = ((it.timestamp - min) / granularity) as usize;
        max_bucket = max_bucket.max(it.bucket);
    }
    log.n_time_buckets = max_bucket + 1;
    log.granularity = Some(granularity);
    Ok(log)
}

/// One sample per eligible interaction that has at least one predecessor.
/// The history holds up to `window` most recent prior events, oldest first.
///
/// With explicit feedback only positive interactions become candidates;
/// negative ones appear solely as (negated) history events. Samples whose
/// candidate sits among the user's first `window` interactions are flagged
/// train-only, which covers every sample of users shorter than `window`.
pub fn build_histories(
    log: &InteractionLog,
    window: usize,
    feedback: Feedback,
) -> Result<Vec<ReasoningSample>> {
    if window == 0 {
        return Err(Error::InvalidArgument("history window must be at least 1".into()));
    }
    let polarity = |p: Polarity| match feedback {
        Feedback::Implicit => Polarity::Positive,
        Feedback::Explicit => p,
    };
    let mut out = Vec::new();
    for seq in &log.per_user {
        for (pos, cand) in seq.iter().enumerate().skip(1) {
            if polarity(cand.polarity) == Polarity::Negative {
                continue;
            }
            let start = pos.saturating_sub(window);
            let history = seq[start..pos]
                .iter()
                .map(|h| HistoryEvent {
                    item: h.item,
                    bucket: h.bucket,
                    polarity: polarity(h.polarity),
                })
                .collect();
            out.push(ReasoningSample {
                user: cand.user,
                history,
                candidate_item: cand.item,
                candidate_time: cand.bucket,
                label: Label::Positive,
                position: pos,
                train_only: pos < window,
            });
        }
    }
    Ok(out)
}

/// Per user: the most recent non-train-only sample goes to test, the second
/// most recent to validation, everything else to train.
pub fn leave_one_out_split(samples: Vec<ReasoningSample>) -> SplitBundle {
    let mut by_user: BTreeMap<usize, Vec<ReasoningSample>> = BTreeMap::new();
    for s in samples {
        by_user.entry(s.user).or_default().push(s);
    }
    let mut bundle = SplitBundle::default();
    for (_, mut seq) in by_user {
        seq.sort_by_key(|s| s.position);
        let eligible: Vec<usize> = seq
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.train_only)
            .map(|(i, _)| i)
            .collect();
        let test = eligible.last().copied();
        let val = eligible.len().checked_sub(2).map(|i| eligible[i]);
        for (i, s) in seq.into_iter().enumerate() {
            if Some(i) == test {
                bundle.test.push(s);
            } else if Some(i) == val {
                bundle.validation.push(s);
            } else {
                bundle.train.push(s);
            }
        }
    }
    bundle
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrepareOptions {
    pub granularity: u64,
    pub feedback: Feedback,
    pub window: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            granularity: DAY_SECONDS,
            feedback: Feedback::Explicit,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Full preparation: binarize (explicit mode), bucketize, build histories
/// and split.
pub fn prepare(log: InteractionLog, opts: PrepareOptions) -> Result<Dataset> {
    let log = match opts.feedback {
        Feedback::Explicit => binarize_ratings(log)?,
        Feedback::Implicit => log,
    };
    let log = bucketize_timestamps(log, opts.granularity)?;
    let samples = build_histories(&log, opts.window, opts.feedback)?;
    let splits = leave_one_out_split(samples);
    Ok(Dataset {
        meta: DatasetMeta {
            n_users: log.n_users,
            n_items: log.n_items,
            n_time_buckets: log.n_time_buckets,
            n_interactions: log.n_interactions(),
            granularity: opts.granularity,
            feedback: opts.feedback,
            window: opts.window,
        },
        user_items: log.user_item_sets(),
        splits,
    })
}
