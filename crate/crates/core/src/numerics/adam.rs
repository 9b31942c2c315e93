use std::collections::BTreeMap;

use crate::error::{shape_err, Result};
use crate::numerics::params::ParamStore;

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.first.get(name)?, self.second.get(name)?))
    }
}

/// One Adam update over every parameter that has a gradient.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let Some(grad) = p.grad.as_ref() else { continue };
        if !p.requires_grad {
            continue;
        }
        let n = p.value.len();
        if grad.len() != n {
            return shape_err(format!("gradient for {name} has {} values, parameter {n}", grad.len()));
        }
        let m = state.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        if m.len() != n {
            return shape_err(format!("moment buffer for {name} has {} values, parameter {n}", m.len()));
        }
        let v = state.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        if v.len() != n {
            return shape_err(format!("moment buffer for {name} has {} values, parameter {n}", v.len()));
        }
        let values = p.value.data_mut();
        for i in 0..n {
            let g = grad.data()[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            values[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
