//! Time-aware self-attentive neural collaborative reasoning.
//!
//! Interaction histories are encoded as user–item event vectors, fused with
//! (optionally self-attention weighted) relative-time embeddings and folded
//! into a single expression vector by learned NOT / OR modules. The
//! expression is scored by cosine similarity against a fixed truth anchor.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod eval;
pub mod logic;
pub mod model;
pub mod train;
mod error;

pub use error::{Error, Result};

#[cfg(test)]
mod testutil;
