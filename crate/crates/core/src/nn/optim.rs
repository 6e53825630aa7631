//! NAdam (Adam with Nesterov momentum).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{GradStore, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self { lr: 6e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: NadamConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(config: NadamConfig, params: &ParamStore) -> Self {
        let zeros: BTreeMap<_, _> =
            params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One NAdam step.
///
/// With `t` the incremented step count:
/// `m ← β1 m + (1−β1) g`, `v ← β2 v + (1−β2) g²`,
/// `m̂ = β1 m / (1−β1^{t+1}) + (1−β1) g / (1−β1^t)`, `v̂ = v / (1−β2^t)`,
/// `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn nadam_step(params: &mut ParamStore, grads: &GradStore, state: &mut OptimizerState) -> Result<()> {
    for key in grads.keys() {
        if !params.contains(key) {
            return Err(Error::Contract(format!("gradient for unknown parameter {key}")));
        }
    }
    for (key, g) in grads.iter() {
        let p = params.get(key).expect("checked above");
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "gradient {key} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }

    state.step += 1;
    let NadamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as f64;
    let bc1_next = 1.0 - beta1.powf(t + 1.0);
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);

    for (key, g) in grads.iter() {
        let m = state.m.entry(key.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(key.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let p = params.get_mut(key).expect("checked above");
        let iter = p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data());
        for (((theta, m), v), &g) in iter {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = beta1 * *m / bc1_next + (1.0 - beta1) * g / bc1;
            let v_hat = *v / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
