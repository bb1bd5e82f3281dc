//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::{Gradients, NumericError, ParamStore, RealMat};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<RealMat>,
    v: Vec<RealMat>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || params.ids().map(|id| {
            let p = params.get(id);
            RealMat::zeros(p.rows(), p.cols())
        });
        Self { config, step: 0, m: zeros().collect(), v: zeros().collect() }
    }
}

/// One Adam update. A non-finite gradient aborts the step before any
/// parameter changes, naming the offending parameter.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<(), NumericError> {
    if let Some(id) = grads.first_non_finite() {
        return Err(NumericError::NonFinite(format!("gradient of {}", params.name(id))));
    }
    for id in params.ids() {
        let (p, g) = (params.get(id).shape(), grads.get(id).shape());
        if p != g || state.m[id.index()].shape() != p {
            return Err(NumericError::ShapeMismatch { op: "adam_step", left: p, right: g });
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    for id in params.ids() {
        let g = grads.get(id).data();
        let m = state.m[id.index()].data_mut();
        let v = state.v[id.index()].data_mut();
        let p = params.get_mut(id).data_mut();
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    if let Some(name) = params.first_non_finite() {
        return Err(NumericError::NonFinite(format!("parameter {name} after update")));
    }
    Ok(())
}
