use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Network;
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.lr) && self.lr > 0.0) {
            return Err(Error::config("/optimizer/lr", "must be finite and > 0"));
        }
        if !(ok(self.beta1) && (0.0..1.0).contains(&self.beta1)) {
            return Err(Error::config("/optimizer/beta1", "must lie in [0, 1)"));
        }
        if !(ok(self.beta2) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::config("/optimizer/beta2", "must lie in [0, 1)"));
        }
        if !(ok(self.eps) && self.eps > 0.0) {
            return Err(Error::config("/optimizer/eps", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub shape: Vec<usize>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Adam state for one network. Moments are created on first use.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One bias-corrected Adam update of every parameter of `net` that holds
    /// a gradient. Updated parameters are fresh leaves without gradients.
    pub fn step(&mut self, net: &mut Network<T>, cfg: &AdamConfig) -> Result<()> {
        for (name, param) in net.parameters() {
            if let Some(state) = self.moments.get(name) {
                if state.shape != param.shape() {
                    return Err(Error::OptimizerDrift {
                        name: name.clone(),
                        state: state.shape.clone(),
                        param: param.shape().to_vec(),
                    });
                }
            }
        }

        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let one = T::one();
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let lr = T::from_f64_lossy(cfg.lr);
        let eps = T::from_f64_lossy(cfg.eps);
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);

        let mut updates = Vec::new();
        for (name, param) in net.parameters() {
            let Some(grad) = param.grad() else { continue };
            let state = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                shape: param.shape().to_vec(),
                m: vec![T::zero(); param.numel()],
                v: vec![T::zero(); param.numel()],
            });
            let mut data = param.to_vec();
            for i in 0..data.len() {
                let g = grad[i];
                state.m[i] = b1 * state.m[i] + (one - b1) * g;
                state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            updates.push((name.clone(), Tensor::parameter(param.shape(), data)?));
        }
        for (name, value) in updates {
            net.set_param(&name, value)?;
        }
        Ok(())
    }
}
