//! Test-only helpers: central-difference gradient oracle.

use crate::autodiff::{ParamStore, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// Componentwise relative error with the `max(|a|, |n|, 1e-8)` denominator.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences of `loss` with respect to every trainable entry of
/// every parameter in the store. Returns per-parameter gradient vectors.
pub fn numeric_param_grads(
    params: &ParamStore,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> Vec<(String, Vec<f64>)> {
    let mut probe = params.clone();
    let mut out = Vec::new();
    for id in params.trainable() {
        let n = params.get(id).numel();
        let mut g = vec![0.0; n];
        for i in 0..n {
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig;
            g[i] = (up - down) / (2.0 * FD_STEP);
        }
        out.push((params.name(id).to_string(), g));
    }
    out
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = crate::autodiff::seeded_rng(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
