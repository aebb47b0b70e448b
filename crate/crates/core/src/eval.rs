//! Teacher-forced perplexity evaluation.
//!
//! Held-out data is split into consecutive non-overlapping windows, each
//! evaluated by a fresh decode session primed with BOS, so results are
//! deterministic and every token is scored exactly once. The summary
//! reports perplexity together with the average number of executed
//! latent steps, the compute proxy that adaptive depth is meant to save.

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, PonderSettings};
use crate::data::WindowSampler;
use crate::decode::{DecodeRecord, DecodeSession};
use crate::error::{CoreError, Result};
use crate::params::Parameters;
use crate::real::Real;

/// How many latent steps each token executes during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// Honor the hard-stopping rule: run steps while `w_k ≥ τ`, truncate
    /// the integration there.
    Adaptive,
    /// Ignore the stopping rule: run all K steps with untruncated
    /// integration, to measure how much the hard stop changes predictions.
    Full,
}

/// Aggregate result of one evaluation pass.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    /// `exp(mean_nll)`.
    pub ppl: f64,
    /// Mean negative log-likelihood per scored token (nats).
    pub mean_nll: f64,
    /// Mean executed latent steps per scored token.
    pub avg_exec_steps: f64,
    /// Number of scored tokens.
    pub n_tokens: usize,
    /// One record per scored token, in corpus order.
    pub records: Vec<DecodeRecord>,
}

/// Evaluates perplexity on `data` (an already-tokenized stream) with
/// sequential windows of `window_len` tokens (BOS included). The trailing
/// window may be shorter. `max_windows` caps the pass for quick estimates;
/// `None` scores the whole stream.
pub fn evaluate_perplexity<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    data: &[u32],
    window_len: usize,
    max_windows: Option<usize>,
    mode: DepthMode,
) -> Result<EvalSummary> {
    if data.is_empty() {
        return Err(CoreError::Data(
            "evaluation requires a non-empty token stream".into(),
        ));
    }
    if window_len < 2 {
        return Err(CoreError::Config(
            "evaluation windows need at least 2 tokens (BOS plus one target)".into(),
        ));
    }
    if max_windows == Some(0) {
        return Err(CoreError::Config(
            "max_windows must be positive when set".into(),
        ));
    }

    let cap = max_windows.unwrap_or(usize::MAX);
    let windows = WindowSampler::sequential_windows(data, window_len, cap);
    let mut records = Vec::new();
    for window in &windows {
        let mut session = DecodeSession::new(params, config, ponder)?;
        if mode == DepthMode::Full {
            session = session.with_full_depth();
        }
        for pair in window.windows(2) {
            let advance = session.advance(pair[0])?;
            records.push(advance.record(pair[1])?);
        }
    }

    let n_tokens = records.len();
    debug_assert!(n_tokens > 0, "non-empty data always yields one window");
    let mean_nll = records.iter().map(|r| r.nll).sum::<f64>() / n_tokens as f64;
    let avg_exec_steps = records.iter().map(|r| r.khat as f64).sum::<f64>() / n_tokens as f64;
    Ok(EvalSummary {
        ppl: mean_nll.exp(),
        mean_nll,
        avg_exec_steps,
        n_tokens,
        records,
    })
}
