//! The reasoning network: embeddings, relative-time self-attention, the
//! user–item event encoder, temporal fusion, NOT/OR logic modules and the
//! truth-anchor score.

mod forward;
mod layers;
mod params;

use serde::{Deserialize, Serialize};

use crate::data::Feedback;
use crate::error::{Error, Result};

pub use forward::{forward_batch, forward_score, ForwardOutput};
pub use layers::{
    embed_lookup, encode_event, fuse_temporal, lnn_expression, logic_not, logic_or,
    relative_time_embeddings, self_attention, truth_score, Attention, Mode,
};
pub use params::{ModelParams, ParamIds, INIT_STD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    None,
    Absolute,
    Relative,
}

impl std::str::FromStr for TimeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TimeMode::None),
            "absolute" => Ok(TimeMode::Absolute),
            "relative" => Ok(TimeMode::Relative),
            other => Err(Error::Config(format!("unknown time mode `{other}`"))),
        }
    }
}

/// The four model variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// No time information (plain neural collaborative reasoning).
    Ncr,
    /// Absolute time embeddings added to history events.
    AbsoluteNoAttention,
    /// Relative time embeddings added to history events.
    RelativeNoAttention,
    /// Self-attention over relative time embeddings.
    Tisancr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Ncr,
        Variant::AbsoluteNoAttention,
        Variant::RelativeNoAttention,
        Variant::Tisancr,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Ncr => "ncr",
            Variant::AbsoluteNoAttention => "tisancr-a-wo-sa",
            Variant::RelativeNoAttention => "tisancr-r-wo-sa",
            Variant::Tisancr => "tisancr",
        }
    }

    pub fn time_mode(self) -> TimeMode {
        match self {
            Variant::Ncr => TimeMode::None,
            Variant::AbsoluteNoAttention => TimeMode::Absolute,
            Variant::RelativeNoAttention | Variant::Tisancr => TimeMode::Relative,
        }
    }

    pub fn attention(self) -> bool {
        self == Variant::Tisancr
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub time_mode: TimeMode,
    pub attention: bool,
    pub feedback: Feedback,
    pub d: usize,
    pub history_window: usize,
}

impl VariantConfig {
    pub fn new(variant: Variant, d: usize) -> Self {
        VariantConfig {
            time_mode: variant.time_mode(),
            attention: variant.attention(),
            feedback: Feedback::Explicit,
            d,
            history_window: crate::data::DEFAULT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attention && self.time_mode != TimeMode::Relative {
            return Err(Error::Config(format!(
                "self-attention requires relative time, got time mode {:?}",
                self.time_mode
            )));
        }
        if self.d == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.history_window == 0 {
            return Err(Error::Config("history window must be at least 1".into()));
        }
        Ok(())
    }

    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.time_mode() == self.time_mode && v.attention() == self.attention)
    }
}

#[cfg(test)]
mod tests;
