use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_HEADER: &str = "epoch,pairwise_loss,logic_reg,negation,double_negation,identity,\
annihilator,idempotence,complementation,l2,loss,val_hr10,val_ndcg10,seconds";

/// Epoch means of the loss terms, weighted by batch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub loss: f64,
    pub pairwise_loss: f64,
    pub l2: f64,
    pub logic_reg: f64,
    /// Per-law penalties, in `Law::ALL` order.
    pub laws: [f64; 6],
    pub val_hr10: Option<f64>,
    pub val_ndcg10: Option<f64>,
    pub seconds: f64,
}

impl TrainLogRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let laws: Vec<String> = self.laws.iter().map(f64::to_string).collect();
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.pairwise_loss,
            self.logic_reg,
            laws.join(","),
            self.l2,
            self.loss,
            opt(self.val_hr10),
            opt(self.val_ndcg10),
            self.seconds
        )
    }
}

/// Append-only CSV training log.
pub struct TrainLog {
    path: PathBuf,
    file: File,
}

impl TrainLog {
    /// Opens for appending, writing the header when the file is new or empty.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let fresh = std::fs::metadata(&path).map_or(true, |m| m.len() == 0);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if fresh {
            writeln!(file, "{LOG_HEADER}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(TrainLog { path, file })
    }

    pub fn append(&mut self, rec: &TrainLogRecord) -> Result<()> {
        writeln!(self.file, "{}", rec.csv_row()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads back every record of a log written by [`TrainLog`].
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<TrainLogRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == LOG_HEADER => {}
        _ => return Err(Error::Dataset(format!("{}: not a training log", path.display()))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            parse_row(line).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: "malformed training log row".into(),
            })
        })
        .collect()
}

fn parse_row(line: &str) -> Option<TrainLogRecord> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 14 {
        return None;
    }
    let num = |s: &str| s.parse::<f64>().ok();
    let opt = |s: &str| if s.is_empty() { Some(None) } else { num(s).map(Some) };
    let mut laws = [0.0; 6];
    for (l, s) in laws.iter_mut().zip(&f[3..9]) {
        *l = num(s)?;
    }
    Some(TrainLogRecord {
        epoch: f[0].parse().ok()?,
        pairwise_loss: num(f[1])?,
        logic_reg: num(f[2])?,
        laws,
        l2: num(f[9])?,
        loss: num(f[10])?,
        val_hr10: opt(f[11])?,
        val_ndcg10: opt(f[12])?,
        seconds: num(f[13])?,
    })
}

/// Drops records past `epoch`, so a run resumed from that epoch's
/// checkpoint does not log an epoch twice.
pub fn truncate_log(path: impl AsRef<Path>, epoch: usize) -> Result<()> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(());
    }
    let mut out = format!("{LOG_HEADER}\n");
    for rec in read_log(path)?.into_iter().filter(|r| r.epoch <= epoch) {
        out.push_str(&rec.csv_row());
        out.push('\n');
    }
    crate::eval::write_file(path, out.as_bytes())
}
