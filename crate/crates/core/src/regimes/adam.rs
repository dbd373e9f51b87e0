use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lstm::Forecaster;
use crate::math;
use crate::tensor::Tensor;

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

/// One bias-corrected Adam update of `params` in place; `t` counts from 1.
///
/// Nothing is modified when a gradient entry is not finite.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    hyper: &AdamConfig,
    t: u64,
) -> Result<()> {
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(Error::Shape {
            op: "adam_step",
            shapes: vec![vec![params.len()], vec![grads.len()], vec![m.len()], vec![v.len()]],
        });
    }
    if t == 0 {
        return Err(invalid("adam step counter starts at 1"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} = {}", grads[i])));
    }
    let c1 = 1.0 - math::powf(hyper.beta1, t as f64);
    let c2 = 1.0 - math::powf(hyper.beta2, t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= hyper.lr * m_hat / (math::sqrt(v_hat) + hyper.eps);
    }
    Ok(())
}

/// Adam state for the three trainable tensors of a [`Forecaster`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(model: &Forecaster, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, model: &mut Forecaster, grads: &[Tensor; 3]) -> Result<()> {
        for (i, g) in grads.iter().enumerate() {
            if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of tensor {i}, entry {j}")));
            }
        }
        self.t += 1;
        for (i, p) in model.tensors_mut().into_iter().enumerate() {
            adam_step(p.data_mut(), grads[i].data(), &mut self.m[i], &mut self.v[i], &self.config, self.t)?;
        }
        Ok(())
    }
}
