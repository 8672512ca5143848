use serde::{Deserialize, Serialize};

use super::Params;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 5.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.clip_norm >= 0.0;
        if !ok {
            return Err(Error::invalid("optimizer settings out of range"));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: OptimConfig,
    step: u64,
    m: Params,
    v: Params,
}

impl AdamW {
    pub fn new(config: OptimConfig, params: &Params) -> Self {
        AdamW {
            config,
            step: 0,
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. A non-finite gradient aborts before any parameter
    /// changes.
    pub fn step(&mut self, params: &mut Params, grads: &Params) -> Result<()> {
        for (name, block) in grads.blocks() {
            if block.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.m.blocks_mut().into_iter().zip(self.v.blocks_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in blocks {
            for i in 0..p.len() {
                p[i] -= c.lr * c.weight_decay * p[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so its global norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
