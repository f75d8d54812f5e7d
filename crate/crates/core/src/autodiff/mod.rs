//! Dense `f64` tensors, a reverse-mode tape, parameter storage, seeded
//! initialization and the Adam optimizer.

mod adam;
mod graph;
mod init;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};
pub use graph::{log_sigmoid, sigmoid, Gradients, Graph, Var};
pub use init::{derived_rng, gaussian_init, seeded_rng, SeededRng};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
