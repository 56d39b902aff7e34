//! Adam with Nesterov momentum and the warming momentum schedule
//! `mu_t = beta1 * (1 - 0.5 * 0.96^(0.004 t))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NAdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for NAdamConfig {
    fn default() -> Self {
        NAdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl NAdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }

    /// Momentum coefficient of step `t` (1-based).
    pub fn momentum(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * 0.004))
    }
}

/// Moments are kept in `f64` whatever the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct NAdamState {
    pub config: NAdamConfig,
    t: u64,
    /// Product of momentum coefficients up to step `t`.
    mu_product: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl NAdamState {
    pub fn new<T: Scalar>(config: NAdamConfig, params: &[Tensor<T>]) -> Result<Self> {
        config.validate()?;
        Ok(NAdamState {
            config,
            t: 0,
            mu_product: 1.0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One optimizer step. `names` label parameters in error messages. Nothing is
/// modified if any gradient is non-finite or mis-shaped.
pub fn nadam_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], names: &[String], state: &mut NAdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient of {} has shape {:?}, parameter {:?}",
                name(i),
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::non_finite(format!("gradient of {}", name(i))));
        }
    }
    let c = state.config;
    state.t += 1;
    let t = state.t;
    let mu_t = c.momentum(t);
    let mu_next = c.momentum(t + 1);
    state.mu_product *= mu_t;
    let prod_t = state.mu_product;
    let prod_next = prod_t * mu_next;
    let bc2 = 1.0 - c.beta2.powi(t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi.as_f64();
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            let m_hat = mu_next * *mi / (1.0 - prod_next) + (1.0 - mu_t) * gi / (1.0 - prod_t);
            let v_hat = *vi / bc2;
            let update = c.lr * m_hat / (v_hat.sqrt() + c.eps);
            *x = T::of_f64(x.as_f64() - update);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of_f64(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
