//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            moments: BTreeMap::new(),
        }
    }

    /// One update at step `t` (1-based). Parameters without a gradient entry are
    /// left untouched.
    pub fn step(
        &mut self,
        params: &mut ParameterStore<T>,
        grads: &Gradients<T>,
        t: u64,
        lr: f64,
    ) -> Result<()> {
        if t == 0 {
            return Err(Error::InvalidConfig("AdamW step index starts at 1".into()));
        }
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powf(t as f64));
        let bc2 = T::lit(1.0 - c.beta2.powf(t as f64));
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let (lr_t, eps) = (T::lit(lr), T::lit(c.eps));
        let one = T::one();

        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for '{name}' has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi = *pi * decay;
                *pi = *pi - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamW::step`].
pub fn adamw_step<T: Real>(
    params: &mut ParameterStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamW<T>,
    t: u64,
    lr: f64,
) -> Result<()> {
    state.step(params, grads, t, lr)
}

/// `base_lr * (1 + cos(pi * t / total)) / 2`.
pub fn cosine_lr(t: usize, total: usize, base_lr: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidConfig("cosine schedule needs total steps > 0".into()));
    }
    let t = t.min(total) as f64;
    Ok(base_lr * (1.0 + (std::f64::consts::PI * t / total as f64).cos()) / 2.0)
}
