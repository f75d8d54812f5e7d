//! Pairwise training: each positive sample is paired with one sampled
//! negative item under the same history and time, and the model is fit with
//! `−ln σ(β(s⁺ − s⁻)) + λ_Δ‖Δ‖² + λ_r · logic regularizer` using Adam.

mod checkpoint;
mod log;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, derived_rng, AdamState, Graph, Tensor, Var};
use crate::data::{sample_negatives, Dataset, NegativeCache, ReasoningSample, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::logic::{logic_regularizer_loss, Law};
use crate::model::{forward_batch, ModelParams, Mode, VariantConfig};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use log::{read_log, truncate_log, TrainLog, TrainLogRecord, LOG_HEADER};

const TRAIN_STREAM: u64 = 0x7472_6169;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2_weight: f64,
    pub dropout: f64,
    pub logic_weight: f64,
    pub beta: f64,
    pub seed: u64,
    pub d: usize,
    /// Stop after this many epochs without a better validation NDCG@10.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 100,
            lr: 1e-3,
            l2_weight: 1e-4,
            dropout: 0.2,
            logic_weight: 0.01,
            beta: 1.0,
            seed: 0,
            d: 60,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lr, self.l2_weight, self.logic_weight, self.beta];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("lr, l2, lambda-r and beta must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.d == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }
}

/// `Σ −ln σ(β(s⁺ − s⁻))` over paired score columns.
pub fn pairwise_loss(g: &mut Graph<'_>, s_pos: Var, s_neg: Var, beta: f64) -> Result<Var> {
    let diff = g.sub(s_pos, s_neg)?;
    let z = g.scale(diff, beta)?;
    let ls = g.log_sigmoid(z)?;
    let m = g.sum(ls)?;
    g.neg(m)
}

/// `λ · Σ‖θ‖²` over trainable parameters.
pub fn l2_penalty(g: &mut Graph<'_>, params: &ModelParams, weight: f64) -> Result<Var> {
    let mut total: Option<Var> = None;
    for id in params.store.trainable().collect::<Vec<_>>() {
        let p = g.param(id);
        let sq = g.sum_squares(p)?;
        total = Some(match total {
            Some(t) => g.add(t, sq)?,
            None => sq,
        });
    }
    match total {
        Some(t) => g.scale(t, weight),
        None => Ok(g.constant(Tensor::scalar(0.0))),
    }
}

/// Loss terms of one batch. `loss` is the optimized objective (pairwise
/// term summed over pairs); `pairwise` is its per-pair mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    pub pairwise: f64,
    pub l2: f64,
    pub logic: f64,
    pub laws: [f64; 6],
}

/// Model, optimizer and progress. `epoch` counts completed epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub params: ModelParams,
    pub adam: AdamState,
    pub variant: VariantConfig,
    pub config: TrainConfig,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(
        variant: VariantConfig,
        config: TrainConfig,
        n_users: usize,
        n_items: usize,
        n_time_buckets: usize,
    ) -> Result<Self> {
        config.validate()?;
        if variant.d != config.d {
            return Err(Error::Config(format!(
                "model dimension {} differs from training dimension {}",
                variant.d, config.d
            )));
        }
        let params = ModelParams::init(&variant, n_users, n_items, n_time_buckets, config.seed)?;
        let adam = AdamState::new(&params.store, config.lr);
        Ok(Trainer {
            params,
            adam,
            variant,
            config,
            epoch: 0,
        })
    }

    pub fn for_dataset(variant: VariantConfig, config: TrainConfig, data: &Dataset) -> Result<Self> {
        let m = &data.meta;
        if variant.history_window != m.window || variant.feedback != m.feedback {
            return Err(Error::Config(format!(
                "dataset was prepared with window {} / {:?} feedback, model expects {} / {:?}",
                m.window, m.feedback, variant.history_window, variant.feedback
            )));
        }
        Trainer::new(variant, config, m.n_users, m.n_items, m.n_time_buckets)
    }

    /// One forward/backward pass and Adam step over `batch`, each positive
    /// paired with the item at the same index of `negatives`.
    pub fn train_batch(
        &mut self,
        batch: &[&ReasoningSample],
        negatives: &[usize],
        rng: &mut crate::autodiff::SeededRng,
    ) -> Result<BatchStats> {
        if batch.is_empty() || batch.len() != negatives.len() {
            return Err(Error::shape(
                "train_batch",
                format!("{} samples, {} negatives", batch.len(), negatives.len()),
            ));
        }
        let cfg = &self.config;
        let params = &self.params;
        let mut g = Graph::with_params(&params.store);
        let cands: Vec<[usize; 2]> = batch
            .iter()
            .zip(negatives)
            .map(|(s, &n)| [s.candidate_item, n])
            .collect();
        let mut mode = Mode::Train { dropout: cfg.dropout, rng };
        let out = forward_batch(&mut g, params, &self.variant, batch, &cands, &mut mode)?;
        let scores = g.reshape(out.scores, &[batch.len(), 2])?;
        let pick_pos = g.constant(Tensor::matrix(2, 1, vec![1.0, 0.0])?);
        let pick_neg = g.constant(Tensor::matrix(2, 1, vec![0.0, 1.0])?);
        let s_pos = g.matmul(scores, pick_pos)?;
        let s_neg = g.matmul(scores, pick_neg)?;
        let pairwise = pairwise_loss(&mut g, s_pos, s_neg, cfg.beta)?;
        let l2 = l2_penalty(&mut g, params, cfg.l2_weight)?;
        let logic = logic_regularizer_loss(&mut g, params, out.logic_vectors, &mut mode)?;
        let weighted = g.scale(logic.total, cfg.logic_weight)?;
        let loss = g.add(pairwise, l2)?;
        let loss = g.add(loss, weighted)?;
        let stats = BatchStats {
            loss: g.scalar(loss),
            pairwise: g.scalar(pairwise) / batch.len() as f64,
            l2: g.scalar(l2),
            logic: g.scalar(logic.total),
            laws: logic.laws.map(|l| g.scalar(l)),
        };
        let grads = g.backward(loss)?;
        self.params.store.zero_grad();
        self.params.store.accumulate(&grads)?;
        adam_step(&mut self.params.store, &mut self.adam)?;
        Ok(stats)
    }

    /// One shuffled pass over `train`. Shuffle order, negatives, dropout
    /// masks and aggregation orders come from a stream keyed by the seed
    /// and the epoch number, so a resumed run repeats an uninterrupted one.
    pub fn train_epoch(
        &mut self,
        train: &[ReasoningSample],
        user_items: &[Vec<usize>],
    ) -> Result<TrainLogRecord> {
        if train.is_empty() {
            return Err(Error::Empty("training split"));
        }
        let start = Instant::now();
        let mut rng = derived_rng(self.config.seed, TRAIN_STREAM, self.epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let n_items = self.params.n_items;
        let mut sums = BatchStats::default();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&ReasoningSample> = chunk.iter().map(|&i| &train[i]).collect();
            let negatives = batch
                .iter()
                .map(|s| {
                    let seen = user_items.get(s.user).ok_or(Error::OutOfBounds {
                        what: "user item sets",
                        index: s.user,
                        len: user_items.len(),
                    })?;
                    Ok(sample_negatives(seen, n_items, 1, &mut rng)?[0])
                })
                .collect::<Result<Vec<_>>>()?;
            let stats = self.train_batch(&batch, &negatives, &mut rng)?;
            let w = batch.len() as f64;
            sums.loss += w * stats.loss;
            sums.pairwise += w * stats.pairwise;
            sums.l2 += w * stats.l2;
            sums.logic += w * stats.logic;
            for (s, l) in sums.laws.iter_mut().zip(stats.laws) {
                *s += w * l;
            }
        }
        self.epoch += 1;
        let n = train.len() as f64;
        Ok(TrainLogRecord {
            epoch: self.epoch,
            loss: sums.loss / n,
            pairwise_loss: sums.pairwise / n,
            l2: sums.l2 / n,
            logic_reg: sums.logic / n,
            laws: sums.laws.map(|l| l / n),
            val_hr10: None,
            val_ndcg10: None,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_checkpoint(path)
    }
}

/// Law names in log-column order.
pub fn law_names() -> [&'static str; 6] {
    Law::ALL.map(Law::name)
}

/// How [`fit`] validates and where it writes.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Validate every this many epochs (0: never). The last epoch is always
    /// validated when validation is on.
    pub validate_every: usize,
    /// Receives `train_log.csv`, `best.ckpt`, `last.ckpt` and `final.ckpt`.
    pub out_dir: Option<PathBuf>,
    /// Best validation `(epoch, ndcg@10)` seen before a resumed run started.
    pub prior_best: Option<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub records: Vec<TrainLogRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_ndcg10: Option<f64>,
    pub stopped_early: bool,
}

/// Trains until `config.epochs` epochs are complete (or early stopping
/// triggers), validating on the dataset's validation split against
/// `val_negatives`. `on_epoch` sees each record after it is logged.
pub fn fit(
    trainer: &mut Trainer,
    data: &Dataset,
    val_negatives: Option<&NegativeCache>,
    opts: &FitOptions,
    mut on_epoch: impl FnMut(&TrainLogRecord, &Trainer) -> Result<()>,
) -> Result<FitOutcome> {
    let mut log = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(TrainLog::open(dir.join("train_log.csv"))?)
        }
        None => None,
    };
    let mut outcome = FitOutcome {
        records: Vec::new(),
        best_epoch: opts.prior_best.map(|b| b.0),
        best_val_ndcg10: opts.prior_best.map(|b| b.1),
        stopped_early: false,
    };
    while trainer.epoch < trainer.config.epochs {
        let mut rec = trainer.train_epoch(&data.splits.train, &data.user_items)?;
        let due = opts.validate_every > 0
            && (rec.epoch % opts.validate_every == 0 || rec.epoch == trainer.config.epochs);
        if let (true, Some(negs)) = (due, val_negatives) {
            let report = validate(trainer, data, negs)?;
            rec.val_hr10 = report.hr(10);
            rec.val_ndcg10 = report.ndcg(10);
            let ndcg = rec.val_ndcg10.unwrap_or(0.0);
            if outcome.best_val_ndcg10.is_none_or(|b| ndcg > b) {
                outcome.best_val_ndcg10 = Some(ndcg);
                outcome.best_epoch = Some(rec.epoch);
                if let Some(dir) = &opts.out_dir {
                    trainer.save(dir.join("best.ckpt"))?;
                }
            }
        }
        if let Some(log) = log.as_mut() {
            log.append(&rec)?;
        }
        if let Some(dir) = &opts.out_dir {
            trainer.save(dir.join("last.ckpt"))?;
        }
        on_epoch(&rec, trainer)?;
        outcome.records.push(rec);
        if let (Some(p), Some(best)) = (trainer.config.patience, outcome.best_epoch) {
            if trainer.epoch >= best + p {
                outcome.stopped_early = true;
                break;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        trainer.save(dir.join("final.ckpt"))?;
    }
    Ok(outcome)
}

fn validate(trainer: &Trainer, data: &Dataset, negs: &NegativeCache) -> Result<MetricsReport> {
    evaluate(
        &trainer.params,
        &trainer.variant,
        &data.splits.validation,
        Split::Validation,
        negs,
        &[10],
    )
}
