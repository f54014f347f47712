//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor2D;

/// `0.5·lr0·(1 + cos(π·t/T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if t > total || total == 0 {
        return Err(Error::Contract(format!("schedule step {t} outside 0..={total}")));
    }
    if t == total {
        return Ok(0.0);
    }
    Ok(0.5 * lr0 * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u32,
    pub m: Vec<Tensor2D>,
    pub v: Vec<Tensor2D>,
}

impl AdamWState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        Self {
            step: 0,
            m: shapes.iter().map(|&(r, c)| Tensor2D::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor2D::zeros(r, c)).collect(),
        }
    }
}

/// One bias-corrected AdamW update: decay, then the Adam step.
pub fn adamw_step(
    params: &mut [&mut Tensor2D],
    grads: &[Tensor2D],
    state: &mut AdamWState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(Error::Shape(format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape())));
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let gk = g.data()[k];
            *w -= lr * cfg.weight_decay * *w;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            *w -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
