//! `tisancr preprocess|train|evaluate|ablate`.

mod ablate;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{parse_amazon, parse_movielens, prepare, Dataset, NegativeCache, PrepareOptions};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_file, MetricsReport};
use crate::train::{fit, read_log, truncate_log, FitOptions, FitOutcome, TrainLogRecord, Trainer};

pub use ablate::{improvement, run_ablation, AblationOutcome, IMPROVEMENTS, TABLE_HEADER};
pub use config::{DatasetSource, RunConfig, DATA_ROOT_ENV};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Parse { .. } | Error::Dataset(_) | Error::Checkpoint(_) => {
            EXIT_DATA
        }
        _ => EXIT_RUNTIME,
    }
}

#[derive(Debug, Parser)]
#[command(name = "tisancr", version, about = "Time-aware neural collaborative reasoning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw rating file and write the prepared dataset and stats.
    Preprocess(Flags),
    /// Train one variant.
    Train(Flags),
    /// Evaluate a checkpoint on a split.
    Evaluate(Flags),
    /// Train and evaluate every variant over seeds and dimensions.
    Ablate(Flags),
}

/// Flags shared by every command. Each overrides the same key of the
/// `--config` file.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Flat `key = value` file; keys are the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// movielens100k, amazon-movies-tv, amazon-electronics or a raw file path.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Root for raw files and prepared data.
    #[arg(long)]
    pub data_root: Option<String>,
    /// Prepared dataset directory or `.jsonl` file.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// ncr, tisancr-a-wo-sa, tisancr-r-wo-sa or tisancr.
    #[arg(long)]
    pub variant: Option<String>,
    /// none, absolute or relative; overrides the variant.
    #[arg(long)]
    pub time_mode: Option<String>,
    /// true or false; overrides the variant.
    #[arg(long)]
    pub attention: Option<String>,
    /// Comma-separated variants for `ablate`, or `all`.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub d: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub l2: Option<String>,
    #[arg(long)]
    pub dropout: Option<String>,
    #[arg(long)]
    pub lambda_r: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Early-stopping patience in epochs, or `off`.
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub dims: Option<String>,
    /// Seed of the cached evaluation negatives.
    #[arg(long)]
    pub eval_seed: Option<String>,
    #[arg(long)]
    pub negatives: Option<String>,
    /// Comma-separated cutoffs, e.g. `5,10,20`.
    #[arg(long)]
    pub ks: Option<String>,
    #[arg(long)]
    pub split: Option<String>,
    /// Time bucket width in seconds.
    #[arg(long)]
    pub granularity: Option<String>,
    /// explicit or implicit.
    #[arg(long)]
    pub feedback: Option<String>,
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub validate_every: Option<String>,
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Checkpoint to continue training from.
    #[arg(long)]
    pub resume: Option<String>,
}

impl Flags {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let all = [
            ("dataset", &self.dataset),
            ("data-root", &self.data_root),
            ("data", &self.data),
            ("out", &self.out),
            ("variant", &self.variant),
            ("time-mode", &self.time_mode),
            ("attention", &self.attention),
            ("variants", &self.variants),
            ("d", &self.d),
            ("epochs", &self.epochs),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("l2", &self.l2),
            ("dropout", &self.dropout),
            ("lambda-r", &self.lambda_r),
            ("beta", &self.beta),
            ("seed", &self.seed),
            ("patience", &self.patience),
            ("seeds", &self.seeds),
            ("dims", &self.dims),
            ("eval-seed", &self.eval_seed),
            ("negatives", &self.negatives),
            ("ks", &self.ks),
            ("split", &self.split),
            ("granularity", &self.granularity),
            ("feedback", &self.feedback),
            ("window", &self.window),
            ("validate-every", &self.validate_every),
            ("checkpoint", &self.checkpoint),
            ("resume", &self.resume),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::defaults(RunConfig::env_data_root());
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(f) => cmd_preprocess(&f.resolve()?),
        Command::Train(f) => cmd_train(&f.resolve()?).map(|_| ()),
        Command::Evaluate(f) => cmd_evaluate(&f.resolve()?).map(|_| ()),
        Command::Ablate(f) => cmd_ablate(&f.resolve()?).map(|_| ()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `config.txt` into `dir`.
pub fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.txt"), cfg.render().as_bytes())
}

#[derive(Debug, Serialize)]
struct Stats {
    dataset: String,
    users: usize,
    items: usize,
    interactions: usize,
    density: f64,
    time_buckets: usize,
    granularity: u64,
    feedback: String,
    window: usize,
    train_samples: usize,
    validation_samples: usize,
    test_samples: usize,
}

impl Stats {
    fn text(&self) -> String {
        format!(
            "dataset: {}\nusers: {}\nitems: {}\ninteractions: {}\ndensity: {:.1}%\n\
             time buckets: {} ({} s)\nfeedback: {}\nwindow: {}\n\
             samples: train {}, validation {}, test {}\n",
            self.dataset,
            self.users,
            self.items,
            self.interactions,
            self.density * 100.0,
            self.time_buckets,
            self.granularity,
            self.feedback,
            self.window,
            self.train_samples,
            self.validation_samples,
            self.test_samples
        )
    }
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let raw = cfg.dataset.raw_path(&cfg.data_root);
    let out = cfg.out.clone().unwrap_or_else(|| {
        let file = cfg.dataset_file();
        file.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    });
    echo_config(cfg, &out)?;
    let log = if cfg.dataset.is_csv() {
        parse_amazon(&raw)?
    } else {
        parse_movielens(&raw)?
    };
    let data = prepare(
        log,
        PrepareOptions {
            granularity: cfg.granularity,
            feedback: cfg.feedback,
            window: cfg.window,
        },
    )?;
    data.save(out.join("dataset.jsonl"))?;
    let m = &data.meta;
    let stats = Stats {
        dataset: cfg.dataset.name(),
        users: m.n_users,
        items: m.n_items,
        interactions: m.n_interactions,
        density: m.density(),
        time_buckets: m.n_time_buckets,
        granularity: m.granularity,
        feedback: m.feedback.as_str().into(),
        window: m.window,
        train_samples: data.splits.train.len(),
        validation_samples: data.splits.validation.len(),
        test_samples: data.splits.test.len(),
    };
    let text = stats.text();
    write_file(&out.join("stats.txt"), text.as_bytes())?;
    let json = serde_json::to_string_pretty(&stats).map_err(|e| Error::Dataset(e.to_string()))?;
    write_file(&out.join("stats.json"), json.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.dataset_file();
    if !path.exists() {
        return Err(Error::Dataset(format!(
            "{}: no prepared dataset (run `tisancr preprocess` first)",
            path.display()
        )));
    }
    Dataset::load(&path)
}

/// Trains `cfg.variant` into `out`, resuming from `resume` when given.
/// Progress goes to stderr.
pub fn train_run(
    cfg: &RunConfig,
    data: &Dataset,
    val_negatives: &NegativeCache,
    out: &Path,
    resume: Option<&Path>,
) -> Result<(Trainer, FitOutcome)> {
    let log_path = out.join("train_log.csv");
    let (mut trainer, prior) = match resume {
        Some(ckpt) => {
            let mut t = Trainer::load(ckpt)?;
            if t.variant != cfg.variant_config(cfg.variant)? {
                return Err(Error::Config(format!(
                    "{} was trained as a different variant",
                    ckpt.display()
                )));
            }
            t.config.epochs = cfg.train.epochs;
            t.config.patience = cfg.train.patience;
            truncate_log(&log_path, t.epoch)?;
            let prior = if log_path.exists() {
                best_of(&read_log(&log_path)?)
            } else {
                None
            };
            (t, prior)
        }
        None => {
            if log_path.exists() {
                std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
            }
            let t = Trainer::for_dataset(cfg.variant_config(cfg.variant)?, cfg.train.clone(), data)?;
            (t, None)
        }
    };
    let opts = FitOptions {
        validate_every: cfg.validate_every,
        out_dir: Some(out.to_path_buf()),
        prior_best: prior,
    };
    let total = trainer.config.epochs;
    let tag = cfg.variant.id();
    let outcome = fit(&mut trainer, data, Some(val_negatives), &opts, |r, _| {
        let val = match (r.val_hr10, r.val_ndcg10) {
            (Some(h), Some(n)) => format!(" val hr@10 {h:.4} ndcg@10 {n:.4}"),
            _ => String::new(),
        };
        eprintln!(
            "[{tag}] epoch {}/{total} loss {:.4} logic {:.4}{val} ({:.1} s)",
            r.epoch, r.pairwise_loss, r.logic_reg, r.seconds
        );
        Ok(())
    })?;
    Ok((trainer, outcome))
}

fn best_of(records: &[TrainLogRecord]) -> Option<(usize, f64)> {
    records
        .iter()
        .filter_map(|r| r.val_ndcg10.map(|n| (r.epoch, n)))
        .fold(None, |best, (e, n)| match best {
            Some((_, b)) if b >= n => best,
            _ => Some((e, n)),
        })
}

fn default_out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<FitOutcome> {
    let out = default_out(cfg, cfg.variant.id());
    echo_config(cfg, &out)?;
    let data = load_dataset(cfg)?;
    let negs = NegativeCache::build(
        &data.splits.validation,
        &data.user_items,
        data.meta.n_items,
        cfg.negatives,
        cfg.eval_seed,
    )?;
    let (_, outcome) = train_run(cfg, &data, &negs, &out, cfg.resume.as_deref())?;
    if let (Some(e), Some(n)) = (outcome.best_epoch, outcome.best_val_ndcg10) {
        println!("best validation ndcg@10 {n:.4} at epoch {e}");
    }
    println!("checkpoints in {}", out.display());
    Ok(outcome)
}

/// Errors unless the checkpoint was trained on data with `data`'s
/// vocabulary.
pub fn check_vocabulary(trainer: &Trainer, data: &Dataset) -> Result<()> {
    let p = &trainer.params;
    let m = &data.meta;
    let ours = (p.n_users, p.n_items, p.n_time_buckets);
    let theirs = (m.n_users, m.n_items, m.n_time_buckets);
    if ours != theirs {
        return Err(Error::Config(format!(
            "checkpoint vocabulary (users, items, time buckets) {ours:?} differs from dataset {theirs:?}"
        )));
    }
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricsReport> {
    let ckpt = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("evaluate needs --checkpoint".into()))?;
    let out = cfg.out.clone().unwrap_or_else(|| {
        ckpt.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    });
    echo_config(cfg, &out)?;
    let data = load_dataset(cfg)?;
    let trainer = Trainer::load(&ckpt)?;
    check_vocabulary(&trainer, &data)?;
    let samples = data.splits.get(cfg.split);
    let negs = NegativeCache::build(
        samples,
        &data.user_items,
        data.meta.n_items,
        cfg.negatives,
        cfg.eval_seed,
    )?;
    let report = evaluate(&trainer.params, &trainer.variant, samples, cfg.split, &negs, &cfg.ks)?;
    report.write(&out, &format!("metrics_{}", cfg.split.as_str()))?;
    for m in &report.metrics {
        println!("{} k={} hr {:.4} ndcg {:.4}", cfg.split.as_str(), m.k, m.hr, m.ndcg);
    }
    Ok(report)
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationOutcome> {
    let out = default_out(cfg, "ablation");
    echo_config(cfg, &out)?;
    let data = load_dataset(cfg)?;
    run_ablation(cfg, &data, &out)
}
