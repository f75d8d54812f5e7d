//! Binary checkpoint container.
//!
//! Layout: 8 magic bytes, a little-endian `u32` version, a `u64` header
//! length, a JSON header (configs, vocabulary sizes, epoch, parameter names,
//! shapes and trainability, optimizer scalars), then every parameter's
//! values followed by the optimizer's first and second moments, all as
//! little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::eval::write_file;
use crate::model::{ModelParams, VariantConfig};
use crate::train::{TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"TISANCR\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    variant: VariantConfig,
    train: TrainConfig,
    epoch: usize,
    n_users: usize,
    n_items: usize,
    n_time_buckets: usize,
    params: Vec<ParamMeta>,
    adam: AdamMeta,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
    requires_grad: bool,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step_count: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    moment_lens: Vec<usize>,
}

pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let p = &trainer.params;
    let a = &trainer.adam;
    let header = Header {
        variant: trainer.variant,
        train: trainer.config.clone(),
        epoch: trainer.epoch,
        n_users: p.n_users,
        n_items: p.n_items,
        n_time_buckets: p.n_time_buckets,
        params: p
            .store
            .iter()
            .map(|(_, name, t)| ParamMeta {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                requires_grad: t.requires_grad(),
            })
            .collect(),
        adam: AdamMeta {
            step_count: a.step_count,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            moment_lens: a.first_moment.iter().map(Vec::len).collect(),
        },
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let values = p
        .store
        .iter()
        .flat_map(|(_, _, t)| t.data())
        .chain(a.first_moment.iter().flatten())
        .chain(a.second_moment.iter().flatten());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path.as_ref(), &buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8).ok() != Some(&CHECKPOINT_MAGIC[..]) {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let json = r.take(usize::try_from(len).map_err(|_| Error::Checkpoint("header size".into()))?)?;
    let h: Header =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if h.adam.moment_lens.len() != h.params.len() {
        return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
    }

    let mut store = ParamStore::new();
    for meta in &h.params {
        let n = meta.shape.iter().product();
        let t = Tensor::new(meta.shape.clone(), r.f64s(n)?)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", meta.name)))?;
        if !t.is_finite() {
            return Err(Error::Checkpoint(format!("{} holds non-finite values", meta.name)));
        }
        store.add(meta.name.clone(), t.with_requires_grad(meta.requires_grad));
    }
    let moments = |r: &mut Reader<'_>| {
        h.adam
            .moment_lens
            .iter()
            .map(|&n| r.f64s(n))
            .collect::<Result<Vec<_>>>()
    };
    let first_moment = moments(&mut r)?;
    let second_moment = moments(&mut r)?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected trailing bytes",
            buf.len() - r.pos
        )));
    }
    let params = ModelParams::from_store(store)?;
    if (params.n_users, params.n_items, params.n_time_buckets) != (h.n_users, h.n_items, h.n_time_buckets)
        || params.d != h.variant.d
    {
        return Err(Error::Checkpoint("parameter shapes disagree with the header".into()));
    }
    Ok(Trainer {
        params,
        adam: AdamState {
            step_count: h.adam.step_count,
            first_moment,
            second_moment,
            lr: h.adam.lr,
            beta1: h.adam.beta1,
            beta2: h.adam.beta2,
            epsilon: h.adam.epsilon,
        },
        variant: h.variant,
        config: h.train,
        epoch: h.epoch,
    })
}
