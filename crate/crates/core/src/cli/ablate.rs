use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cli::{echo_config, train_run, RunConfig};
use crate::data::{Dataset, NegativeCache, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_file, MetricsReport};
use crate::model::Variant;
use crate::train::{read_log, TrainLogRecord};

pub const TABLE_HEADER: &str = "row,metric,k,value,n_runs";
const RUNS_HEADER: &str = "variant,d,seed,k,hr,ndcg";
const DIMS_HEADER: &str = "variant,d,metric,k,value,n_runs";
const EPOCHS_HEADER: &str = "variant,d,seed,epoch,pairwise_loss,logic_reg,val_hr10,val_ndcg10";

/// Improvement rows: `(label, a, b)` reports `a` over `b`.
pub const IMPROVEMENTS: [(&str, Variant, Variant); 5] = [
    ("improvement1", Variant::Tisancr, Variant::Ncr),
    ("improvement2", Variant::AbsoluteNoAttention, Variant::Ncr),
    ("improvement3", Variant::RelativeNoAttention, Variant::Ncr),
    ("improvement4", Variant::RelativeNoAttention, Variant::AbsoluteNoAttention),
    ("improvement5", Variant::Tisancr, Variant::RelativeNoAttention),
];

/// Relative improvement of `a` over `b` in percent; undefined for `b = 0`.
pub fn improvement(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| (a - b) / b * 100.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub variant: Variant,
    pub d: usize,
    pub seed: u64,
    pub test: MetricsReport,
    pub log: Vec<TrainLogRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub row: String,
    pub metric: &'static str,
    pub k: usize,
    pub value: f64,
    pub n_runs: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationOutcome {
    pub runs: Vec<RunResult>,
    pub table: Vec<TableRow>,
}

impl AblationOutcome {
    /// Mean over seeds of a metric at the table dimension.
    pub fn mean(&self, variant: Variant, metric: &str, k: usize) -> Option<f64> {
        self.table
            .iter()
            .find(|r| r.row == variant.id() && r.metric == metric && r.k == k)
            .map(|r| r.value)
    }
}

fn run_dir(out: &Path, variant: Variant, d: usize, seed: u64) -> PathBuf {
    out.join("runs").join(format!("{}_d{d}_seed{seed}", variant.id()))
}

/// Trains and tests every (dimension, seed, variant). A run directory whose
/// `config.txt` matches is reused when complete and resumed from
/// `last.ckpt` otherwise. Outputs are rewritten after every run, so a
/// failure leaves the finished runs' results in place.
pub fn run_ablation(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<AblationOutcome> {
    let cache = |samples| {
        NegativeCache::build(samples, &data.user_items, data.meta.n_items, cfg.negatives, cfg.eval_seed)
    };
    let val_negs = cache(&data.splits.validation)?;
    let test_negs = cache(&data.splits.test)?;
    let mut dims = vec![cfg.train.d];
    dims.extend(cfg.dims.iter().filter(|&&d| d != cfg.train.d));

    let mut outcome = AblationOutcome::default();
    for &d in &dims {
        for &seed in &cfg.seeds {
            for &variant in &cfg.variants {
                let dir = run_dir(out, variant, d, seed);
                let mut rc = cfg.clone();
                rc.variant = variant;
                rc.time_mode = None;
                rc.attention = None;
                rc.variants = vec![variant];
                rc.train.d = d;
                rc.dims = vec![d];
                rc.train.seed = seed;
                rc.seeds = vec![seed];
                rc.out = Some(dir.clone());
                rc.resume = None;
                rc.checkpoint = None;
                let res = one_run(&rc, data, &val_negs, &test_negs, &dir);
                match res {
                    Ok(r) => {
                        outcome.runs.push(r);
                        outcome.table = table(cfg, &outcome.runs);
                        write_outputs(cfg, &outcome, out)?;
                    }
                    Err(e) => {
                        write_outputs(cfg, &outcome, out)?;
                        return Err(e);
                    }
                }
            }
        }
    }
    print!("{}", summary(cfg, &outcome));
    Ok(outcome)
}

fn one_run(
    rc: &RunConfig,
    data: &Dataset,
    val_negs: &NegativeCache,
    test_negs: &NegativeCache,
    dir: &Path,
) -> Result<RunResult> {
    let rendered = rc.render();
    let same_config = std::fs::read_to_string(dir.join("config.txt")).is_ok_and(|c| c == rendered);
    let metrics_path = dir.join("metrics_test.json");
    let log_path = dir.join("train_log.csv");
    if same_config && metrics_path.exists() && log_path.exists() {
        let text = std::fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let test: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| Error::Dataset(format!("{}: {e}", metrics_path.display())))?;
        return Ok(RunResult {
            variant: rc.variant,
            d: rc.train.d,
            seed: rc.train.seed,
            test,
            log: read_log(&log_path)?,
        });
    }
    let last = dir.join("last.ckpt");
    let resume = (same_config && last.exists()).then_some(last.as_path());
    echo_config(rc, dir)?;
    let (trainer, _) = train_run(rc, data, val_negs, dir, resume)?;
    let test = evaluate(
        &trainer.params,
        &trainer.variant,
        &data.splits.test,
        Split::Test,
        test_negs,
        &rc.ks,
    )?;
    test.write(dir, "metrics_test")?;
    Ok(RunResult {
        variant: rc.variant,
        d: rc.train.d,
        seed: rc.train.seed,
        test,
        log: read_log(&log_path)?,
    })
}

fn means(runs: &[&RunResult], metric: &str, k: usize) -> Option<f64> {
    let vals: Vec<f64> = runs
        .iter()
        .filter_map(|r| match metric {
            "hr" => r.test.hr(k),
            _ => r.test.ndcg(k),
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn table(cfg: &RunConfig, runs: &[RunResult]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for &v in &cfg.variants {
        let of: Vec<&RunResult> = runs.iter().filter(|r| r.variant == v && r.d == cfg.train.d).collect();
        for metric in ["ndcg", "hr"] {
            for &k in &cfg.ks {
                if let Some(value) = means(&of, metric, k) {
                    rows.push(TableRow { row: v.id().into(), metric, k, value, n_runs: of.len() });
                }
            }
        }
    }
    let mut imps = Vec::new();
    for (label, a, b) in IMPROVEMENTS {
        for r in rows.iter().filter(|r| r.row == a.id()) {
            let base = rows.iter().find(|o| o.row == b.id() && o.metric == r.metric && o.k == r.k);
            if let Some((base, value)) = base.and_then(|b| Some((b, improvement(r.value, b.value)?))) {
                imps.push(TableRow {
                    row: label.into(),
                    metric: r.metric,
                    k: r.k,
                    value,
                    n_runs: r.n_runs.min(base.n_runs),
                });
            }
        }
    }
    rows.extend(imps);
    rows
}

fn write_outputs(cfg: &RunConfig, outcome: &AblationOutcome, out: &Path) -> Result<()> {
    let mut t = format!("{TABLE_HEADER}\n");
    for r in &outcome.table {
        let _ = writeln!(t, "{},{},{},{},{}", r.row, r.metric, r.k, r.value, r.n_runs);
    }
    write_file(&out.join("ablation_table.csv"), t.as_bytes())?;

    let mut runs = format!("{RUNS_HEADER}\n");
    let mut epochs = format!("{EPOCHS_HEADER}\n");
    for r in &outcome.runs {
        for m in &r.test.metrics {
            let _ = writeln!(runs, "{},{},{},{},{},{}", r.variant.id(), r.d, r.seed, m.k, m.hr, m.ndcg);
        }
        for rec in &r.log {
            if let (Some(h), Some(n)) = (rec.val_hr10, rec.val_ndcg10) {
                let _ = writeln!(
                    epochs,
                    "{},{},{},{},{},{},{h},{n}",
                    r.variant.id(),
                    r.d,
                    r.seed,
                    rec.epoch,
                    rec.pairwise_loss,
                    rec.logic_reg
                );
            }
        }
    }
    write_file(&out.join("runs.csv"), runs.as_bytes())?;
    write_file(&out.join("series_epochs.csv"), epochs.as_bytes())?;

    let mut dims: Vec<usize> = outcome.runs.iter().map(|r| r.d).collect();
    dims.sort_unstable();
    dims.dedup();
    let mut series = format!("{DIMS_HEADER}\n");
    for &v in &cfg.variants {
        for &d in &dims {
            let of: Vec<&RunResult> = outcome.runs.iter().filter(|r| r.variant == v && r.d == d).collect();
            for metric in ["ndcg", "hr"] {
                for &k in &cfg.ks {
                    if let Some(value) = means(&of, metric, k) {
                        let _ = writeln!(series, "{},{d},{metric},{k},{value},{}", v.id(), of.len());
                    }
                }
            }
        }
    }
    write_file(&out.join("series_dimensions.csv"), series.as_bytes())
}

/// Variants down, `N@k` then `HR@k` across, as percentages.
fn summary(cfg: &RunConfig, outcome: &AblationOutcome) -> String {
    let mut s = format!("{:<16}", "");
    for metric in ["N", "HR"] {
        for k in &cfg.ks {
            let _ = write!(s, "{:>9}", format!("{metric}@{k}"));
        }
    }
    s.push('\n');
    let mut labels: Vec<String> = cfg.variants.iter().map(|v| v.id().to_string()).collect();
    labels.extend(IMPROVEMENTS.iter().map(|i| i.0.to_string()));
    for label in labels {
        let cells: Vec<String> = ["ndcg", "hr"]
            .iter()
            .flat_map(|m| cfg.ks.iter().map(move |k| (*m, *k)))
            .map(|(m, k)| {
                outcome
                    .table
                    .iter()
                    .find(|r| r.row == label && r.metric == m && r.k == k)
                    .map_or("--".into(), |r| {
                        if label.starts_with("improvement") {
                            format!("{:.2}%", r.value)
                        } else {
                            format!("{:.2}", r.value * 100.0)
                        }
                    })
            })
            .collect();
        if cells.iter().all(|c| c == "--") {
            continue;
        }
        let _ = write!(s, "{label:<16}");
        for c in cells {
            let _ = write!(s, "{c:>9}");
        }
        s.push('\n');
    }
    s
}
