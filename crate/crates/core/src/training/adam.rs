use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::neuralops::ParamLayout;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if !ok {
            return Err(TrainError::Config(format!("invalid Adam hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Moment estimates and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One Adam update in place. On a non-finite result nothing is modified and
/// the error names the offending parameter block.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    layout: Option<&ParamLayout>,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(TrainError::Config(format!(
            "Adam buffers disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TrainError::Config(format!("learning rate {lr} must be positive")));
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.t + 1;
    let c1 = 1.0 - beta1.powf(t as f64);
    let c2 = 1.0 - beta2.powf(t as f64);
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    let mut next = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let g = grads[i];
        let mi = beta1 * state.m[i] + (1.0 - beta1) * g;
        let vi = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let theta = params[i] - lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        if !(theta.is_finite() && mi.is_finite() && vi.is_finite()) {
            let block = layout.and_then(|l| l.owner(i)).unwrap_or("parameters").to_string();
            return Err(TrainError::NonFinite {
                what: format!("Adam update of {block} (index {i})"),
                last_checkpoint: None,
            });
        }
        m.push(mi);
        v.push(vi);
        next.push(theta);
    }
    params.copy_from_slice(&next);
    state.m = m;
    state.v = v;
    state.t = t;
    Ok(())
}
