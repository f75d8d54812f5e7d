//! Leave-one-out ranking evaluation: each held-out item is ranked against
//! sampled negatives and scored by HR@k and NDCG@k.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{NegativeCache, ReasoningSample, Split};
use crate::error::{Error, Result};
use crate::model::{forward_batch, ModelParams, Mode, VariantConfig};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];
/// Negatives ranked against each held-out item.
pub const EVAL_NEGATIVES: usize = 100;
const USERS_PER_GRAPH: usize = 32;

/// Candidates sorted by descending score with the 1-based rank of the
/// ground truth. The ground truth loses every tie.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    pub ground_truth_rank: usize,
}

impl RankedList {
    /// `scores[0]` belongs to `items[0]`, the ground truth.
    pub fn from_scores(items: &[usize], scores: &[f64]) -> Result<Self> {
        if items.is_empty() || items.len() != scores.len() {
            return Err(Error::shape(
                "rank",
                format!("{} items, {} scores", items.len(), scores.len()),
            ));
        }
        let mut order: Vec<usize> = (0..items.len()).collect();
        // Descending score; on equal scores negatives come first.
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then_with(|| (a == 0).cmp(&(b == 0)))
                .then(a.cmp(&b))
        });
        Ok(RankedList {
            items: order.iter().map(|&i| items[i]).collect(),
            scores: order.iter().map(|&i| scores[i]).collect(),
            ground_truth_rank: ground_truth_rank(scores[0], &scores[1..]),
        })
    }
}

/// `1 + #{negatives scoring at least as high as the ground truth}`.
pub fn ground_truth_rank(truth: f64, negatives: &[f64]) -> usize {
    1 + negatives.iter().filter(|&&s| s >= truth).count()
}

pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1 && k >= 1, "rank and k start at 1");
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1 && k >= 1, "rank and k start at 1");
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Scores the sample's candidate followed by `negatives` in inference mode.
pub fn rank_candidates(
    params: &ModelParams,
    config: &VariantConfig,
    sample: &ReasoningSample,
    negatives: &[usize],
) -> Result<RankedList> {
    let items: Vec<usize> = std::iter::once(sample.candidate_item)
        .chain(negatives.iter().copied())
        .collect();
    let scores = model_scores(params, config, &[sample], &[items.clone()])?;
    RankedList::from_scores(&items, &scores)
}

fn model_scores(
    params: &ModelParams,
    config: &VariantConfig,
    samples: &[&ReasoningSample],
    candidates: &[Vec<usize>],
) -> Result<Vec<f64>> {
    let mut g = Graph::with_params(&params.store);
    let out = forward_batch(&mut g, params, config, samples, candidates, &mut Mode::Eval)?;
    Ok(g.value(out.scores).to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub split: Split,
    pub seed: u64,
    pub n_users: usize,
    pub metrics: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn hr(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.hr)
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.metrics.iter().find(|m| m.k == k).map(|m| m.ndcg)
    }

    pub const CSV_HEADER: &'static str = "variant,split,k,hr,ndcg,n_users,seed";

    pub fn csv_rows(&self) -> Vec<String> {
        self.metrics
            .iter()
            .map(|m| {
                format!(
                    "{},{},{},{},{},{},{}",
                    self.variant,
                    self.split.as_str(),
                    m.k,
                    m.hr,
                    m.ndcg,
                    self.n_users,
                    self.seed
                )
            })
            .collect()
    }

    /// Writes `<stem>.json` and `<stem>.csv` next to each other.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        write_file(&dir.join(format!("{stem}.json")), json.as_bytes())?;
        let mut csv = String::from(Self::CSV_HEADER);
        csv.push('\n');
        for row in self.csv_rows() {
            csv.push_str(&row);
            csv.push('\n');
        }
        write_file(&dir.join(format!("{stem}.csv")), csv.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Ranks every sample's candidate against its user's cached negatives using
/// `scorer`, which receives a chunk of samples with their candidate lists
/// (ground truth first) and returns the flattened scores.
pub fn evaluate_with<F>(
    samples: &[ReasoningSample],
    negatives: &NegativeCache,
    ks: &[usize],
    mut scorer: F,
) -> Result<(Vec<MetricRow>, Vec<usize>)>
where
    F: FnMut(&[&ReasoningSample], &[Vec<usize>]) -> Result<Vec<f64>>,
{
    if samples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid cutoffs {ks:?}")));
    }
    let mut ranks = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(USERS_PER_GRAPH) {
        let refs: Vec<&ReasoningSample> = chunk.iter().collect();
        let cands = chunk
            .iter()
            .map(|s| {
                let negs = negatives.get(s.user).ok_or_else(|| {
                    Error::InvalidArgument(format!("no cached negatives for user {}", s.user))
                })?;
                Ok(std::iter::once(s.candidate_item).chain(negs.iter().copied()).collect())
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        let scores = scorer(&refs, &cands)?;
        let mut offset = 0;
        for c in &cands {
            let s = &scores[offset..offset + c.len()];
            ranks.push(ground_truth_rank(s[0], &s[1..]));
            offset += c.len();
        }
    }
    let n = ranks.len() as f64;
    let rows = ks
        .iter()
        .map(|&k| MetricRow {
            k,
            hr: ranks.iter().map(|&r| hr_at_k(r, k)).sum::<f64>() / n,
            ndcg: ranks.iter().map(|&r| ndcg_at_k(r, k)).sum::<f64>() / n,
        })
        .collect();
    Ok((rows, ranks))
}

/// HR@k and NDCG@k of the model over `samples`, averaged over users.
pub fn evaluate(
    params: &ModelParams,
    config: &VariantConfig,
    samples: &[ReasoningSample],
    split: Split,
    negatives: &NegativeCache,
    ks: &[usize],
) -> Result<MetricsReport> {
    let (metrics, _) = evaluate_with(samples, negatives, ks, |s, c| {
        model_scores(params, config, s, c)
    })?;
    Ok(MetricsReport {
        variant: config.variant().map_or("custom", |v| v.id()).to_string(),
        split,
        seed: negatives.seed,
        n_users: samples.len(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        assert_eq!(ground_truth_rank(0.9, &[0.1, 0.5, 0.2]), 1);
        assert_eq!(ground_truth_rank(0.5, &[0.5, 0.5, 0.5, 0.1, 0.2]), 4);
        let r = RankedList::from_scores(&[7, 1, 2, 3], &[0.5, 0.5, 0.9, 0.1]).unwrap();
        assert_eq!(r.ground_truth_rank, 3);
        assert_eq!(r.items, vec![2, 1, 7, 3]);
        assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn metric_examples() {
        assert_eq!(hr_at_k(3, 5), 1.0);
        assert_eq!(hr_at_k(11, 10), 0.0);
        assert_eq!(hr_at_k(10, 10), 1.0);
        assert_eq!(ndcg_at_k(1, 5), 1.0);
        assert_eq!(ndcg_at_k(3, 5), 0.5);
        assert_eq!(ndcg_at_k(6, 5), 0.0);
    }

    fn cache(samples: &[ReasoningSample]) -> NegativeCache {
        let per_user = samples
            .iter()
            .map(|s| (s.user, (100..200).collect()))
            .collect();
        NegativeCache { seed: 4, per_user }
    }

    fn samples(n: usize) -> Vec<ReasoningSample> {
        (0..n)
            .map(|u| ReasoningSample {
                user: u,
                history: vec![],
                candidate_item: u,
                candidate_time: 0,
                label: crate::data::Label::Positive,
                position: 0,
                train_only: false,
            })
            .collect()
    }

    #[test]
    fn perfect_ranker_scores_one() {
        let s = samples(40);
        let (rows, ranks) = evaluate_with(&s, &cache(&s), &DEFAULT_KS, |chunk, c| {
            Ok(chunk
                .iter()
                .zip(c)
                .flat_map(|(_, c)| (0..c.len()).map(|i| if i == 0 { 1.0 } else { 0.0 }))
                .collect())
        })
        .unwrap();
        assert!(ranks.iter().all(|&r| r == 1));
        assert!(rows.iter().all(|r| r.hr == 1.0 && r.ndcg == 1.0));
    }

    #[test]
    fn order_of_users_does_not_matter() {
        let s = samples(70);
        let score = |chunk: &[&ReasoningSample], c: &[Vec<usize>]| {
            Ok(chunk
                .iter()
                .zip(c)
                .flat_map(|(s, c)| {
                    c.iter().map(move |&i| ((i * 31 + s.user * 7) % 53) as f64)
                })
                .collect())
        };
        let (a, _) = evaluate_with(&s, &cache(&s), &DEFAULT_KS, score).unwrap();
        let mut rev = s.clone();
        rev.reverse();
        let (b, _) = evaluate_with(&rev, &cache(&s), &DEFAULT_KS, score).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.hr - y.hr).abs() < 1e-15 && (x.ndcg - y.ndcg).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_split_and_bad_cutoffs() {
        let none = |_: &[&ReasoningSample], _: &[Vec<usize>]| Ok(vec![]);
        assert!(matches!(
            evaluate_with(&[], &cache(&[]), &DEFAULT_KS, none),
            Err(Error::Empty(_))
        ));
        let s = samples(1);
        assert!(evaluate_with(&s, &cache(&s), &[0], none).is_err());
    }

    #[test]
    fn report_schema() {
        let report = MetricsReport {
            variant: "tisancr".into(),
            split: Split::Test,
            seed: 3,
            n_users: 10,
            metrics: vec![
                MetricRow { k: 5, hr: 0.5, ndcg: 0.25 },
                MetricRow { k: 10, hr: 0.75, ndcg: 0.3 },
            ],
        };
        let rows = report.csv_rows();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], "tisancr,test,5,0.5,0.25,10,3");
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path(), "metrics").unwrap();
        let back: MetricsReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap())
                .unwrap();
        assert_eq!(back, report);
    }

    proptest! {
        #[test]
        fn metrics_are_monotone_and_ordered(rank in 1usize..150, k in 1usize..40) {
            prop_assert!(hr_at_k(rank, k) <= hr_at_k(rank, k + 1));
            prop_assert!(ndcg_at_k(rank, k) <= ndcg_at_k(rank, k + 1));
            prop_assert!(ndcg_at_k(rank, k) <= hr_at_k(rank, k));
        }

        #[test]
        fn rank_ignores_negative_order(mut scores in proptest::collection::vec(-3i32..3, 2..30)) {
            let scores_f: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            let r1 = ground_truth_rank(scores_f[0], &scores_f[1..]);
            scores[1..].reverse();
            let scores_f: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            prop_assert_eq!(r1, ground_truth_rank(scores_f[0], &scores_f[1..]));
            let items: Vec<usize> = (0..scores.len()).collect();
            prop_assert_eq!(RankedList::from_scores(&items, &scores_f).unwrap().ground_truth_rank, r1);
        }
    }
}
