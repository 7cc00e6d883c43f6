//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::numerics::param::{ParamSet, TensorValue};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// AdamW hyperparameters. The moment decay rates and epsilon follow the
/// common (0.9, 0.999, 1e-8) defaults.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Domain(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Domain("weight decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Domain("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Clone, Debug)]
pub struct AdamWState {
    pub config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, TensorValue>,
    second: BTreeMap<String, TensorValue>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamWState {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay update over the trainable parameters.
///
/// `grads` must contain a gradient for every trainable parameter of
/// `params` (and nothing else); frozen parameters are left untouched.
pub fn adamw_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamWState) -> Result<()> {
    for (name, param) in params.iter() {
        if param.trainable && grads.get(name).is_none() {
            return Err(Error::contract(format!(
                "missing gradient for trainable parameter {name}"
            )));
        }
    }
    for (name, grad) in grads.iter() {
        match params.get(name) {
            None => {
                return Err(Error::contract(format!(
                    "gradient for unknown parameter {name}"
                )))
            }
            Some(p) if !p.trainable => {
                return Err(Error::contract(format!(
                    "gradient supplied for frozen parameter {name}"
                )))
            }
            Some(p) if !p.value.same_shape(&grad.value) => {
                return Err(Error::shape("adamw_step", format!("parameter {name}")))
            }
            _ => {}
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c = state.config;
    let bias1 = 1.0 - c.beta1.powi(t);
    let bias2 = 1.0 - c.beta2.powi(t);

    for (name, param) in params.iter_mut() {
        if !param.trainable {
            continue;
        }
        let grad = &grads.get(name).unwrap().value;
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| grad.zeros_like());
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| grad.zeros_like());

        let p = param.value.elems_mut();
        let g = grad.elems();
        let m = m.elems_mut();
        let v = v.elems_mut();
        for i in 0..p.len() {
            // Decay is decoupled from the adaptive step.
            p[i] -= c.lr * c.weight_decay * p[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
    }
    Ok(())
}
