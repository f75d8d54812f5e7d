//! Preprocessed dataset file.
//!
//! Line-delimited JSON. The first line is a header object
//! `{"format":"tisancr-dataset","version":1,...}` carrying vocabulary sizes,
//! bucket granularity (seconds), feedback mode and history window. It is
//! followed by one `{"kind":"user","user":u,"items":[...]}` line per user
//! (sorted interacted items) and one `{"kind":"sample","split":...}` line per
//! reasoning sample, in split order train, validation, test. History events
//! are `[item, bucket, ±1]` triples, oldest first.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    Feedback, HistoryEvent, Label, Polarity, ReasoningSample, Split, SplitBundle,
};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "tisancr-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_users: usize,
    pub n_items: usize,
    pub n_time_buckets: usize,
    pub n_interactions: usize,
    pub granularity: u64,
    pub feedback: Feedback,
    pub window: usize,
}

impl DatasetMeta {
    pub fn density(&self) -> f64 {
        self.n_interactions as f64 / (self.n_users as f64 * self.n_items as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// Sorted interacted items per user (the full log, all splits).
    pub user_items: Vec<Vec<usize>>,
    pub splits: SplitBundle,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(flatten)]
    meta: DatasetMeta,
    n_train: usize,
    n_validation: usize,
    n_test: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    User {
        user: usize,
        items: Vec<usize>,
    },
    Sample {
        split: Split,
        user: usize,
        item: usize,
        time: usize,
        position: usize,
        train_only: bool,
        history: Vec<(usize, usize, i8)>,
    },
}

impl Dataset {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let tmp = path.with_extension("tmp");
        {
            let file = fs::File::create(&tmp).map_err(io)?;
            let mut w = BufWriter::new(file);
            let header = Header {
                format: FORMAT_NAME.into(),
                version: FORMAT_VERSION,
                meta: self.meta.clone(),
                n_train: self.splits.train.len(),
                n_validation: self.splits.validation.len(),
                n_test: self.splits.test.len(),
            };
            writeln!(w, "{}", serde_json::to_string(&header).expect("header")).map_err(io)?;
            for (user, items) in self.user_items.iter().enumerate() {
                let rec = Record::User {
                    user,
                    items: items.clone(),
                };
                writeln!(w, "{}", serde_json::to_string(&rec).expect("record")).map_err(io)?;
            }
            for split in [Split::Train, Split::Validation, Split::Test] {
                for s in self.splits.get(split) {
                    let rec = Record::Sample {
                        split,
                        user: s.user,
                        item: s.candidate_item,
                        time: s.candidate_time,
                        position: s.position,
                        train_only: s.train_only,
                        history: s
                            .history
                            .iter()
                            .map(|h| (h.item, h.bucket, h.polarity.sign()))
                            .collect(),
                    };
                    writeln!(w, "{}", serde_json::to_string(&rec).expect("record")).map_err(io)?;
                }
            }
            w.flush().map_err(io)?;
        }
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let first = lines
            .next()
            .ok_or_else(|| Error::Dataset(format!("{} is empty", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format != FORMAT_NAME {
            return Err(Error::Dataset(format!(
                "{}: not a preprocessed dataset (format `{}`)",
                path.display(),
                header.format
            )));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "{}: format version {} unsupported (expected {})",
                path.display(),
                header.version,
                FORMAT_VERSION
            )));
        }
        let meta = header.meta;
        let mut user_items = vec![Vec::new(); meta.n_users];
        let mut splits = SplitBundle::default();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| Error::io(path, e))?;
            let rec: Record =
                serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
            match rec {
                Record::User { user, items } => {
                    if user >= meta.n_users {
                        return Err(parse_err(lineno, format!("user {user} out of range")));
                    }
                    user_items[user] = items;
                }
                Record::Sample {
                    split,
                    user,
                    item,
                    time,
                    position,
                    train_only,
                    history,
                } => {
                    let history = history
                        .into_iter()
                        .map(|(item, bucket, sign)| {
                            Polarity::from_sign(sign)
                                .map(|polarity| HistoryEvent {
                                    item,
                                    bucket,
                                    polarity,
                                })
                                .ok_or_else(|| parse_err(lineno, format!("bad polarity {sign}")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let sample = ReasoningSample {
                        user,
                        history,
                        candidate_item: item,
                        candidate_time: time,
                        label: Label::Positive,
                        position,
                        train_only,
                    };
                    validate(&meta, &sample).map_err(|m| parse_err(lineno, m))?;
                    match split {
                        Split::Train => splits.train.push(sample),
                        Split::Validation => splits.validation.push(sample),
                        Split::Test => splits.test.push(sample),
                    }
                }
            }
        }
        let counts = (splits.train.len(), splits.validation.len(), splits.test.len());
        if counts != (header.n_train, header.n_validation, header.n_test) {
            return Err(Error::Dataset(format!(
                "{}: truncated, split sizes {:?} do not match header",
                path.display(),
                counts
            )));
        }
        Ok(Dataset {
            meta,
            user_items,
            splits,
        })
    }
}

fn validate(meta: &DatasetMeta, s: &ReasoningSample) -> std::result::Result<(), String> {
    if s.user >= meta.n_users || s.candidate_item >= meta.n_items {
        return Err("user or item id out of range".into());
    }
    if s.history.is_empty() || s.history.len() > meta.window {
        return Err(format!("history length {} outside 1..={}", s.history.len(), meta.window));
    }
    for h in &s.history {
        if h.item >= meta.n_items || h.bucket >= meta.n_time_buckets || h.bucket > s.candidate_time {
            return Err("history event out of range".into());
        }
    }
    if s.candidate_time >= meta.n_time_buckets {
        return Err("candidate time out of range".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{prepare, Interaction, InteractionLog, PrepareOptions};

    fn tiny() -> Dataset {
        let mut v = Vec::new();
        for u in 0..3 {
            for k in 0..9 {
                v.push(Interaction::new(u, (u + 2 * k) % 12, 1 + (k % 5) as u8, 1000 * k as u64 + u as u64));
            }
        }
        let log = InteractionLog::from_interactions(v, 3, 12).unwrap();
        prepare(log, PrepareOptions { granularity: 1500, ..Default::default() }).unwrap()
    }

    #[test]
    fn save_load_roundtrip_and_stable_bytes() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        ds.save(&a).unwrap();
        ds.save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let back = Dataset::load(&a).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        ds.save(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let cut: Vec<&str> = text.lines().collect();
        fs::write(&p, cut[..cut.len() - 1].join("\n")).unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Dataset(_))));
        fs::write(&p, "{\"format\":\"other\"}\n").unwrap();
        assert!(Dataset::load(&p).is_err());
    }
}
