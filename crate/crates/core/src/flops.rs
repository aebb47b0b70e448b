//! Compute accounting for adaptive-depth decoding.
//!
//! Uses the standard dense-transformer approximation of 6 floating-point
//! operations per parameter per processed position. An adaptively pondering
//! model processes `1 + avg_exec_steps` positions per emitted token, so its
//! per-token cost scales by exactly that factor.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Inputs of a FLOPs estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsQuery {
    /// Model parameter count.
    pub n_params: u64,
    /// Number of tokens processed or generated.
    pub tokens: u64,
    /// Mean executed latent steps per token (0 for a plain model).
    pub avg_exec_steps: f64,
}

impl FlopsQuery {
    pub fn validate(&self) -> Result<()> {
        if !self.avg_exec_steps.is_finite() || self.avg_exec_steps < 0.0 {
            return Err(CoreError::Config(format!(
                "avg_exec_steps must be finite and nonnegative, got {}",
                self.avg_exec_steps
            )));
        }
        Ok(())
    }
}

/// Estimated floating-point operation counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsEstimate {
    /// `6 · n_params · tokens · (1 + avg_exec_steps)`.
    pub total: f64,
    /// `total / tokens` (equals `total` when `tokens` is 1; 0 when 0).
    pub per_token: f64,
}

/// Estimates total and per-token FLOPs for a decoding run.
pub fn flops_estimate(query: &FlopsQuery) -> Result<FlopsEstimate> {
    query.validate()?;
    let per_token = 6.0 * query.n_params as f64 * (1.0 + query.avg_exec_steps);
    Ok(FlopsEstimate {
        total: per_token * query.tokens as f64,
        per_token: if query.tokens == 0 { 0.0 } else { per_token },
    })
}

/// Inverts the per-token estimate: how many executed steps per token a
/// measured per-token FLOPs figure implies for a model of `n_params`.
/// Negative results mean the figure is below even the zero-step cost.
pub fn implied_steps(per_token_flops: f64, n_params: u64) -> Result<f64> {
    if n_params == 0 {
        return Err(CoreError::Config(
            "implied steps need a positive parameter count".into(),
        ));
    }
    if !per_token_flops.is_finite() || per_token_flops < 0.0 {
        return Err(CoreError::Config(format!(
            "per-token FLOPs must be finite and nonnegative, got {per_token_flops}"
        )));
    }
    Ok(per_token_flops / (6.0 * n_params as f64) - 1.0)
}
