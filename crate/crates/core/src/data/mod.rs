//! Dataset ingestion and preparation: parsing raw rating files, rating
//! binarization, timestamp bucketing, fixed-window histories, leave-one-out
//! splitting and negative sampling.

mod negatives;
mod parse;
mod prepare;
mod store;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use negatives::{sample_negatives, NegativeCache};
pub use parse::{parse_amazon, parse_movielens};
pub use prepare::{
    binarize_ratings, bucketize_timestamps, build_histories, leave_one_out_split, prepare,
    PrepareOptions, DAY_SECONDS, DEFAULT_WINDOW,
};
pub use store::{Dataset, DatasetMeta, FORMAT_NAME, FORMAT_VERSION};
pub use synthetic::synthetic_log;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(sign: i8) -> Option<Self> {
        match sign {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    /// Every interaction is a positive event; ratings are ignored.
    Implicit,
    /// Ratings ≥ 4 are positive events, ratings ≤ 3 negated history events.
    #[default]
    Explicit,
}

impl Feedback {
    pub fn as_str(self) -> &'static str {
        match self {
            Feedback::Implicit => "implicit",
            Feedback::Explicit => "explicit",
        }
    }
}

impl std::str::FromStr for Feedback {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "implicit" => Ok(Feedback::Implicit),
            "explicit" => Ok(Feedback::Explicit),
            other => Err(crate::Error::Config(format!("unknown feedback mode `{other}`"))),
        }
    }
}

/// One rating event with dense ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: u8,
    pub timestamp: u64,
    /// Set by [`binarize_ratings`]; positive until then.
    pub polarity: Polarity,
    /// Set by [`bucketize_timestamps`]; zero until then.
    pub bucket: usize,
}

impl Interaction {
    pub fn new(user: usize, item: usize, rating: u8, timestamp: u64) -> Self {
        Interaction {
            user,
            item,
            rating,
            timestamp,
            polarity: Polarity::Positive,
            bucket: 0,
        }
    }
}

/// Per-user chronologically sorted interaction sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionLog {
    pub per_user: Vec<Vec<Interaction>>,
    pub n_users: usize,
    pub n_items: usize,
    /// Zero until timestamps have been bucketized.
    pub n_time_buckets: usize,
    pub granularity: Option<u64>,
    /// Original ids, indexed by dense id.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl InteractionLog {
    /// Builds a log from dense-id interactions, sorting each user's events by
    /// timestamp (stable, so ties keep input order).
    pub fn from_interactions(
        interactions: Vec<Interaction>,
        n_users: usize,
        n_items: usize,
    ) -> crate::Result<Self> {
        let mut per_user = vec![Vec::new(); n_users];
        for it in interactions {
            if it.user >= n_users || it.item >= n_items {
                return Err(crate::Error::InvalidArgument(format!(
                    "interaction ({}, {}) outside vocabulary {} x {}",
                    it.user, it.item, n_users, n_items
                )));
            }
            per_user[it.user].push(it);
        }
        for seq in &mut per_user {
            seq.sort_by_key(|i| i.timestamp);
        }
        Ok(InteractionLog {
            per_user,
            n_users,
            n_items,
            n_time_buckets: 0,
            granularity: None,
            user_ids: (0..n_users).map(|u| u.to_string()).collect(),
            item_ids: (0..n_items).map(|i| i.to_string()).collect(),
        })
    }

    pub fn n_interactions(&self) -> usize {
        self.per_user.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        self.n_interactions() as f64 / (self.n_users as f64 * self.n_items as f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Interaction> {
        self.per_user.iter().flatten()
    }

    /// Sorted, de-duplicated item ids each user interacted with.
    pub fn user_item_sets(&self) -> Vec<Vec<usize>> {
        self.per_user
            .iter()
            .map(|seq| {
                let mut items: Vec<usize> = seq.iter().map(|i| i.item).collect();
                items.sort_unstable();
                items.dedup();
                items
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub item: usize,
    pub bucket: usize,
    pub polarity: Polarity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

/// One training / evaluation instance: a user, their most recent prior
/// events (oldest first) and a candidate item at a time bucket.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningSample {
    pub user: usize,
    pub history: Vec<HistoryEvent>,
    pub candidate_item: usize,
    pub candidate_time: usize,
    pub label: Label,
    /// Position of the candidate in the user's full sequence.
    pub position: usize,
    pub train_only: bool,
}

impl ReasoningSample {
    /// Same history and time, different candidate item.
    pub fn with_candidate(&self, item: usize, label: Label) -> Self {
        ReasoningSample {
            candidate_item: item,
            label,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitBundle {
    pub train: Vec<ReasoningSample>,
    pub validation: Vec<ReasoningSample>,
    pub test: Vec<ReasoningSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(crate::Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl SplitBundle {
    pub fn get(&self, split: Split) -> &[ReasoningSample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
