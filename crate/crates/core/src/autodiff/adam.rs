use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Adam optimizer state. Moments are kept per parameter slot of the store
/// they were created for; frozen parameters keep empty moment buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = |_| Vec::new();
        let mut state = AdamState {
            step_count: 0,
            first_moment: (0..params.len()).map(zeros).collect(),
            second_moment: (0..params.len()).map(zeros).collect(),
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        };
        for id in params.trainable() {
            let n = params.get(id).numel();
            state.first_moment[id.index()] = vec![0.0; n];
            state.second_moment[id.index()] = vec![0.0; n];
        }
        state
    }

    /// One bias-corrected Adam update of every trainable parameter.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.first_moment.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = params.trainable().collect();
        for &id in &ids {
            if params.get(id).grad().is_none() {
                return Err(Error::MissingGradient(params.name(id).to_string()));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        for id in ids {
            let m = &mut self.first_moment[id.index()];
            let v = &mut self.second_moment[id.index()];
            let tensor = params.get_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            if m.len() != grad.len() {
                return Err(Error::InvalidArgument(format!(
                    "moment length {} for parameter of {} values",
                    m.len(),
                    grad.len()
                )));
            }
            for (((w, g), m), v) in tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: `state.step(params)`.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    state.step(params)
}
