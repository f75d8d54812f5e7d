use rand::SeedableRng;

use crate::autodiff::{derived_rng, gaussian_init, ParamId, ParamStore, SeededRng, Tensor};
use crate::error::{Error, Result};
use crate::model::{TimeMode, VariantConfig};

/// Standard deviation of the Gaussian used for every parameter.
pub const INIT_STD: f64 = 0.01;

const ANCHOR_STREAM: u64 = 0x616e_6368;

/// Handles into the parameter store. Weight matrices are stored
/// `[in, out]` and applied to row vectors (`x · W`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIds {
    pub user_emb: ParamId,
    pub item_emb: ParamId,
    pub time_emb: ParamId,
    pub w_query: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub enc_w1: ParamId,
    pub enc_b1: ParamId,
    pub enc_w2: ParamId,
    pub enc_b2: ParamId,
    pub not_w1: ParamId,
    pub not_b1: ParamId,
    pub not_w2: ParamId,
    pub not_b2: ParamId,
    pub or_w1: ParamId,
    pub or_b1: ParamId,
    pub or_w2: ParamId,
    pub or_b2: ParamId,
    pub anchor: ParamId,
}

const NAMES: [&str; 19] = [
    "user_emb", "item_emb", "time_emb", "w_query", "w_key", "w_value", "enc_w1", "enc_b1",
    "enc_w2", "enc_b2", "not_w1", "not_b1", "not_w2", "not_b2", "or_w1", "or_b1", "or_w2",
    "or_b2", "anchor",
];

impl ParamIds {
    fn resolve(store: &ParamStore) -> Result<Self> {
        let f = |n: &str| {
            store
                .find(n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{n}`")))
        };
        Ok(ParamIds {
            user_emb: f(NAMES[0])?,
            item_emb: f(NAMES[1])?,
            time_emb: f(NAMES[2])?,
            w_query: f(NAMES[3])?,
            w_key: f(NAMES[4])?,
            w_value: f(NAMES[5])?,
            enc_w1: f(NAMES[6])?,
            enc_b1: f(NAMES[7])?,
            enc_w2: f(NAMES[8])?,
            enc_b2: f(NAMES[9])?,
            not_w1: f(NAMES[10])?,
            not_b1: f(NAMES[11])?,
            not_w2: f(NAMES[12])?,
            not_b2: f(NAMES[13])?,
            or_w1: f(NAMES[14])?,
            or_b1: f(NAMES[15])?,
            or_w2: f(NAMES[16])?,
            or_b2: f(NAMES[17])?,
            anchor: f(NAMES[18])?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    pub ids: ParamIds,
    pub n_users: usize,
    pub n_items: usize,
    pub n_time_buckets: usize,
    pub d: usize,
}

impl ModelParams {
    /// Gaussian initialization of every table and layer. The truth anchor is
    /// drawn from its own stream, unit-normalized and frozen. Parameters the
    /// variant never reads (time table without time, attention projections
    /// without attention) are frozen too, so they take no optimizer or
    /// ℓ2 updates.
    pub fn init(
        config: &VariantConfig,
        n_users: usize,
        n_items: usize,
        n_time_buckets: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::init_with_std(config, n_users, n_items, n_time_buckets, seed, INIT_STD)
    }

    pub fn init_with_std(
        config: &VariantConfig,
        n_users: usize,
        n_items: usize,
        n_time_buckets: usize,
        seed: u64,
        std: f64,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let shapes: [(&str, Vec<usize>); 18] = [
            (NAMES[0], vec![n_users, d]),
            (NAMES[1], vec![n_items, d]),
            (NAMES[2], vec![n_time_buckets.max(1), d]),
            (NAMES[3], vec![d, d]),
            (NAMES[4], vec![d, d]),
            (NAMES[5], vec![d, d]),
            (NAMES[6], vec![2 * d, d]),
            (NAMES[7], vec![d]),
            (NAMES[8], vec![d, d]),
            (NAMES[9], vec![d]),
            (NAMES[10], vec![d, d]),
            (NAMES[11], vec![d]),
            (NAMES[12], vec![d, d]),
            (NAMES[13], vec![d]),
            (NAMES[14], vec![2 * d, d]),
            (NAMES[15], vec![d]),
            (NAMES[16], vec![d, d]),
            (NAMES[17], vec![d]),
        ];
        for (name, shape) in shapes {
            store.add(name, gaussian_init(&shape, std, &mut rng)?);
        }
        let mut anchor_rng = derived_rng(seed, ANCHOR_STREAM, 0);
        let mut anchor = gaussian_init(&[d], INIT_STD, &mut anchor_rng)?;
        let norm = anchor.squared_norm().sqrt();
        anchor.data_mut().iter_mut().for_each(|v| *v /= norm);
        store.add(NAMES[18], anchor.with_requires_grad(false));

        let ids = ParamIds::resolve(&store)?;
        if config.time_mode == TimeMode::None {
            store.get_mut(ids.time_emb).set_requires_grad(false);
        }
        if !config.attention {
            for id in [ids.w_query, ids.w_key, ids.w_value] {
                store.get_mut(id).set_requires_grad(false);
            }
        }
        Ok(ModelParams {
            store,
            ids,
            n_users,
            n_items,
            n_time_buckets: n_time_buckets.max(1),
            d,
        })
    }

    /// Rebuilds from a store loaded from disk, checking shapes.
    pub fn from_store(store: ParamStore) -> Result<Self> {
        let ids = ParamIds::resolve(&store)?;
        let shape = |id: ParamId| store.get(id).shape().to_vec();
        let d = shape(ids.anchor)[0];
        let n_users = shape(ids.user_emb)[0];
        let n_items = shape(ids.item_emb)[0];
        let n_time_buckets = shape(ids.time_emb)[0];
        if shape(ids.enc_w1) != [2 * d, d] || shape(ids.or_w1) != [2 * d, d] {
            return Err(Error::Checkpoint("inconsistent layer shapes".into()));
        }
        Ok(ModelParams {
            store,
            ids,
            n_users,
            n_items,
            n_time_buckets,
            d,
        })
    }

    pub fn anchor(&self) -> &Tensor {
        self.store.get(self.ids.anchor)
    }

    /// `Σ‖θ‖²` over trainable parameters (the anchor is excluded).
    pub fn squared_norm(&self) -> f64 {
        self.store
            .trainable()
            .map(|id| self.store.get(id).squared_norm())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn anchor_is_unit_and_frozen() {
        let cfg = VariantConfig::new(Variant::Tisancr, 8);
        let p = ModelParams::init(&cfg, 3, 4, 5, 11).unwrap();
        assert!((p.anchor().squared_norm() - 1.0).abs() < 1e-12);
        assert!(!p.anchor().requires_grad());
        let q = ModelParams::init(&cfg, 3, 4, 5, 11).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn unused_parameters_are_frozen_per_variant() {
        let ncr = ModelParams::init(&VariantConfig::new(Variant::Ncr, 4), 2, 2, 2, 0).unwrap();
        assert!(!ncr.store.get(ncr.ids.time_emb).requires_grad());
        assert!(!ncr.store.get(ncr.ids.w_query).requires_grad());
        let rel = ModelParams::init(&VariantConfig::new(Variant::RelativeNoAttention, 4), 2, 2, 2, 0)
            .unwrap();
        assert!(rel.store.get(rel.ids.time_emb).requires_grad());
        assert!(!rel.store.get(rel.ids.w_value).requires_grad());
        let full = ModelParams::init(&VariantConfig::new(Variant::Tisancr, 4), 2, 2, 2, 0).unwrap();
        assert_eq!(full.store.trainable().count(), 18);
    }

    #[test]
    fn attention_requires_relative_time() {
        let mut cfg = VariantConfig::new(Variant::Tisancr, 4);
        cfg.time_mode = TimeMode::Absolute;
        assert!(matches!(ModelParams::init(&cfg, 2, 2, 2, 0), Err(Error::Config(_))));
    }
}
