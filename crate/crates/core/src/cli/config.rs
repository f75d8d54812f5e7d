//! Flat `key = value` run configuration. Keys mirror the long flag names.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Feedback, Split, DAY_SECONDS, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::eval::DEFAULT_KS;
use crate::model::{TimeMode, Variant, VariantConfig};
use crate::train::TrainConfig;

/// Environment variable naming the default data root.
pub const DATA_ROOT_ENV: &str = "TISANCR_DATA_ROOT";

/// Built-in datasets and where their raw files live under the data root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSource {
    MovieLens100k,
    AmazonMoviesTv,
    AmazonElectronics,
    Custom(PathBuf),
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::MovieLens100k => "movielens100k".into(),
            DatasetSource::AmazonMoviesTv => "amazon-movies-tv".into(),
            DatasetSource::AmazonElectronics => "amazon-electronics".into(),
            DatasetSource::Custom(p) => p.display().to_string(),
        }
    }

    pub fn raw_path(&self, root: &Path) -> PathBuf {
        match self {
            DatasetSource::MovieLens100k => root.join("ml-100k").join("u.data"),
            DatasetSource::AmazonMoviesTv => root.join("amazon").join("ratings_Movies_and_TV.csv"),
            DatasetSource::AmazonElectronics => root.join("amazon").join("ratings_Electronics.csv"),
            DatasetSource::Custom(p) => p.clone(),
        }
    }

    /// Comma-separated (Amazon style) rather than tab-separated input.
    pub fn is_csv(&self) -> bool {
        match self {
            DatasetSource::MovieLens100k => false,
            DatasetSource::AmazonMoviesTv | DatasetSource::AmazonElectronics => true,
            DatasetSource::Custom(p) => p.extension().is_some_and(|e| e == "csv"),
        }
    }

    /// Directory name for prepared data of this source.
    pub fn slug(&self) -> String {
        match self {
            DatasetSource::Custom(p) => p
                .file_stem()
                .map_or("custom".into(), |s| s.to_string_lossy().into_owned()),
            other => other.name(),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "movielens100k" | "ml-100k" => DatasetSource::MovieLens100k,
            "amazon-movies-tv" => DatasetSource::AmazonMoviesTv,
            "amazon-electronics" => DatasetSource::AmazonElectronics,
            "" => return Err(Error::Config("empty dataset".into())),
            path => DatasetSource::Custom(PathBuf::from(path)),
        })
    }
}

/// Everything a command needs, after merging defaults, the config file and
/// flags.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub data_root: PathBuf,
    /// Prepared dataset file or directory; defaults under the data root.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub variant: Variant,
    /// Overrides the variant's time mode.
    pub time_mode: Option<TimeMode>,
    /// Overrides the variant's use of self-attention.
    pub attention: Option<bool>,
    pub variants: Vec<Variant>,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub dims: Vec<usize>,
    pub eval_seed: u64,
    pub negatives: usize,
    pub ks: Vec<usize>,
    pub split: Split,
    pub granularity: u64,
    pub feedback: Feedback,
    pub window: usize,
    pub validate_every: usize,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(data_root: PathBuf) -> Self {
        RunConfig {
            dataset: DatasetSource::MovieLens100k,
            data_root,
            data: None,
            out: None,
            variant: Variant::Tisancr,
            time_mode: None,
            attention: None,
            variants: Variant::ALL.to_vec(),
            train: TrainConfig::default(),
            seeds: vec![0],
            dims: vec![60],
            eval_seed: 2024,
            negatives: crate::eval::EVAL_NEGATIVES,
            ks: DEFAULT_KS.to_vec(),
            split: Split::Test,
            granularity: DAY_SECONDS,
            feedback: Feedback::Explicit,
            window: DEFAULT_WINDOW,
            validate_every: 10,
            checkpoint: None,
            resume: None,
        }
    }

    /// Default data root: the environment variable, else `./data`.
    pub fn env_data_root() -> PathBuf {
        std::env::var_os(DATA_ROOT_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key} = {v}: {e}"));
        macro_rules! num {
            () => {
                v.parse().map_err(|e| bad(&e))?
            };
        }
        match key {
            "dataset" => self.dataset = v.parse()?,
            "data-root" => self.data_root = PathBuf::from(v),
            "data" => self.data = non_empty(v),
            "out" => self.out = non_empty(v),
            "variant" => self.variant = v.parse()?,
            "time-mode" => {
                self.time_mode = if v.is_empty() { None } else { Some(v.parse()?) }
            }
            "attention" => {
                self.attention = if v.is_empty() { None } else { Some(num!()) }
            }
            "variants" => {
                self.variants = if v == "all" {
                    Variant::ALL.to_vec()
                } else {
                    list(v, |s| s.parse())?
                }
            }
            "d" => self.train.d = num!(),
            "epochs" => self.train.epochs = num!(),
            "batch" => self.train.batch_size = num!(),
            "lr" => self.train.lr = num!(),
            "l2" => self.train.l2_weight = num!(),
            "dropout" => self.train.dropout = num!(),
            "lambda-r" => self.train.logic_weight = num!(),
            "beta" => self.train.beta = num!(),
            "seed" => self.train.seed = num!(),
            "patience" => {
                self.train.patience = match v {
                    "" | "off" | "none" => None,
                    _ => Some(num!()),
                }
            }
            "seeds" => self.seeds = list(v, |s| s.parse().map_err(|e| bad(&e)))?,
            "dims" => self.dims = list(v, |s| s.parse().map_err(|e| bad(&e)))?,
            "eval-seed" => self.eval_seed = num!(),
            "negatives" => self.negatives = num!(),
            "ks" => self.ks = list(v, |s| s.parse().map_err(|e| bad(&e)))?,
            "split" => self.split = v.parse()?,
            "granularity" => self.granularity = num!(),
            "feedback" => self.feedback = v.parse()?,
            "window" => self.window = num!(),
            "validate-every" => self.validate_every = num!(),
            "checkpoint" => self.checkpoint = non_empty(v),
            "resume" => self.resume = non_empty(v),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected `key = value`", path.display(), n + 1))
            })?;
            self.set(k.trim(), v).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), n + 1))
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.variant_config(self.variant)?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config(format!("invalid ks {:?}", self.ks)));
        }
        if self.negatives == 0 {
            return Err(Error::Config("negatives must be positive".into()));
        }
        if self.granularity == 0 || self.window == 0 {
            return Err(Error::Config("granularity and window must be positive".into()));
        }
        if self.seeds.is_empty() || self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Config("seeds and dims must be non-empty".into()));
        }
        Ok(())
    }

    pub fn variant_config(&self, variant: Variant) -> Result<VariantConfig> {
        let mut v = VariantConfig::new(variant, self.train.d);
        if variant == self.variant {
            v.time_mode = self.time_mode.unwrap_or(v.time_mode);
            v.attention = self.attention.unwrap_or(v.attention);
        }
        v.feedback = self.feedback;
        v.history_window = self.window;
        v.validate()?;
        Ok(v)
    }

    /// Prepared dataset file.
    pub fn dataset_file(&self) -> PathBuf {
        let dir = self
            .data
            .clone()
            .unwrap_or_else(|| self.data_root.join("prepared").join(self.dataset.slug()));
        if dir.extension().is_some_and(|e| e == "jsonl") {
            dir
        } else {
            dir.join("dataset.jsonl")
        }
    }

    /// Canonical `key = value` rendering; feeding it back through
    /// [`RunConfig::apply_file`] reproduces this config.
    pub fn render(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let t = &self.train;
        let entries: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.name()),
            ("data-root", self.data_root.display().to_string()),
            ("data", path(&self.data)),
            ("out", path(&self.out)),
            ("variant", self.variant.id().into()),
            (
                "time-mode",
                self.time_mode.map_or(String::new(), |t| format!("{t:?}").to_lowercase()),
            ),
            ("attention", self.attention.map_or(String::new(), |a| a.to_string())),
            ("variants", join(self.variants.iter().map(|v| v.id().to_string()).collect())),
            ("d", t.d.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("l2", t.l2_weight.to_string()),
            ("dropout", t.dropout.to_string()),
            ("lambda-r", t.logic_weight.to_string()),
            ("beta", t.beta.to_string()),
            ("seed", t.seed.to_string()),
            ("patience", t.patience.map_or("off".into(), |p| p.to_string())),
            ("seeds", join(self.seeds.iter().map(u64::to_string).collect())),
            ("dims", join(self.dims.iter().map(usize::to_string).collect())),
            ("eval-seed", self.eval_seed.to_string()),
            ("negatives", self.negatives.to_string()),
            ("ks", join(self.ks.iter().map(usize::to_string).collect())),
            ("split", self.split.as_str().into()),
            ("granularity", self.granularity.to_string()),
            ("feedback", self.feedback.as_str().into()),
            ("window", self.window.to_string()),
            ("validate-every", self.validate_every.to_string()),
            ("checkpoint", path(&self.checkpoint)),
            ("resume", path(&self.resume)),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn non_empty(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn list<T>(v: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}
