//! Decoupled-weight-decay adaptive-moment optimizer with linear warmup,
//! cosine decay, and global-norm gradient clipping.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::Parameters;
use crate::real::{fr, Real};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Peak learning rate after warmup.
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Decoupled weight decay, skipped for norm gains.
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup_steps")]
    pub warmup_steps: usize,
    /// Global-norm clip threshold; 0 disables clipping.
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    /// Cosine floor as a fraction of the peak rate.
    #[serde(default = "default_final_lr_fraction")]
    pub final_lr_fraction: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_warmup_steps() -> usize {
    20
}
fn default_grad_clip() -> f64 {
    1.0
}
fn default_final_lr_fraction() -> f64 {
    0.1
}

impl OptimizerConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
            warmup_steps: default_warmup_steps(),
            grad_clip: default_grad_clip(),
            final_lr_fraction: default_final_lr_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CoreError::Config("learning rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(CoreError::Config(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(CoreError::Config("optimizer eps must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(CoreError::Config(
                "weight decay and grad clip must be nonnegative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(CoreError::Config("final lr fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment state, one slot per parameter tensor in canonical
/// traversal order.
pub struct AdamW<F: Real> {
    config: OptimizerConfig,
    total_steps: usize,
    step: usize,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
    decay: Vec<bool>,
}

impl<F: Real> AdamW<F> {
    pub fn new(params: &Parameters<F>, config: OptimizerConfig, total_steps: usize) -> Result<Self> {
        config.validate()?;
        if total_steps == 0 {
            return Err(CoreError::Config("total steps must be positive".into()));
        }
        let mut m = Vec::new();
        let mut decay = Vec::new();
        params.visit(|name, t| {
            m.push(Array2::zeros(t.dim()));
            decay.push(!name.contains("norm"));
        });
        let v = m.clone();
        Ok(Self { config, total_steps, step: 0, m, v, decay })
    }

    /// Learning rate at 1-based step `t`: linear warmup to the peak, then
    /// cosine decay to `final_lr_fraction` of it by the final step.
    pub fn lr_at(&self, t: usize) -> f64 {
        let peak = self.config.lr;
        let warmup = self.config.warmup_steps;
        if warmup > 0 && t <= warmup {
            return peak * t as f64 / warmup as f64;
        }
        let total = self.total_steps.max(warmup + 1);
        let progress = (t - warmup) as f64 / (total - warmup) as f64;
        let progress = progress.clamp(0.0, 1.0);
        let floor = self.config.final_lr_fraction;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        peak * (floor + (1.0 - floor) * cosine)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One update from gradients in canonical traversal order. Returns the
    /// pre-clip global gradient norm.
    pub fn apply(&mut self, params: &mut Parameters<F>, grads: &[Array2<F>]) -> Result<f64> {
        if grads.len() != self.m.len() {
            return Err(CoreError::Shape(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        let mut sq = 0.0f64;
        for g in grads {
            sq += g.iter().map(|&v| v.as_f64() * v.as_f64()).sum::<f64>();
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(CoreError::Numeric(format!(
                "non-finite gradient norm {norm}"
            )));
        }
        let clip_scale = if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            self.config.grad_clip / norm
        } else {
            1.0
        };

        self.step += 1;
        let lr = self.lr_at(self.step);
        let b1 = fr::<F>(self.config.beta1);
        let b2 = fr::<F>(self.config.beta2);
        let one = F::one();
        let bias1 = 1.0 - self.config.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.config.beta2.powi(self.step as i32);
        let eps = fr::<F>(self.config.eps);
        let scale = fr::<F>(clip_scale);
        let lr_f = fr::<F>(lr);
        let wd = fr::<F>(self.config.weight_decay);
        let inv_bias1 = fr::<F>(1.0 / bias1);
        let inv_bias2 = fr::<F>(1.0 / bias2);

        let mut idx = 0;
        params.visit_mut(|_, tensor| {
            let g = &grads[idx];
            debug_assert_eq!(g.dim(), tensor.dim(), "gradient shape at slot {idx}");
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            ndarray::Zip::from(tensor)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &graw| {
                    let g = graw * scale;
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m * inv_bias1;
                    let vhat = *v * inv_bias2;
                    let mut update = mhat / (vhat.sqrt() + eps);
                    if self.decay[idx] {
                        update += wd * *p;
                    }
                    *p = *p - lr_f * update;
                });
            idx += 1;
        });
        Ok(norm)
    }
}
