//! Inference-time router bias sweeps.
//!
//! Adding `α·k` to the router logits tilts every token toward more (α > 0)
//! or fewer (α < 0) steps without retraining. Sweeping α and measuring the
//! loss change against the α = 0 baseline — separately for the easiest and
//! hardest tokens — shows whether extra compute helps where the router
//! already spends it.

use crate::config::{ModelConfig, PonderSettings};
use crate::data::WindowSampler;
use crate::decode::{token_nll, DecodeSession};
use crate::error::{CoreError, Result};
use crate::params::Parameters;
use crate::real::Real;

use super::difficulty::difficulty_buckets;

/// One sweep measurement: a bias value, a token subset, and the effect.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPoint {
    pub alpha: f64,
    /// `easy` (bottom difficulty tertile), `hard` (top tertile), or `all`.
    pub subset: String,
    /// Mean NLL at this α minus mean NLL at α = 0, over the subset.
    pub delta_loss: f64,
    /// Mean executed steps over the subset at this α.
    pub avg_steps: f64,
}

/// CSV header matching [`CounterfactualPoint::csv_row`]:
/// `alpha,subset,delta_loss,avg_steps`.
pub fn counterfactual_csv_header() -> &'static str {
    "alpha,subset,delta_loss,avg_steps"
}

impl CounterfactualPoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6}",
            self.alpha, self.subset, self.delta_loss, self.avg_steps
        )
    }
}

/// Per-token measurements of one evaluation pass at a fixed α.
struct TiltedPass {
    nll: Vec<f64>,
    khat: Vec<usize>,
    /// Step-0 difficulty; only collected on the baseline pass.
    l_t: Vec<f64>,
}

fn tilted_pass<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    windows: &[Vec<u32>],
    alpha: f64,
    collect_difficulty: bool,
) -> Result<TiltedPass> {
    let mut pass = TiltedPass {
        nll: Vec::new(),
        khat: Vec::new(),
        l_t: Vec::new(),
    };
    for window in windows {
        let mut session = DecodeSession::new(params, config, ponder)?.with_alpha(alpha);
        for pair in window.windows(2) {
            if collect_difficulty {
                use crate::backbone::lm_logits;
                use ndarray::Axis;
                let probe = session.advance_probed(pair[0])?;
                let h0 = probe.states[0].clone().insert_axis(Axis(0));
                pass.l_t
                    .push(token_nll(&lm_logits(params, &h0).row(0).to_owned(), pair[1])?);
                pass.nll.push(probe.advance.nll(pair[1])?);
                pass.khat.push(probe.advance.khat);
            } else {
                let advance = session.advance(pair[0])?;
                pass.nll.push(advance.nll(pair[1])?);
                pass.khat.push(advance.khat);
            }
        }
    }
    Ok(pass)
}

fn subset_means(pass: &TiltedPass, subset: &[usize]) -> (f64, f64) {
    let n = subset.len() as f64;
    let nll = subset.iter().map(|&i| pass.nll[i]).sum::<f64>() / n;
    let steps = subset.iter().map(|&i| pass.khat[i] as f64).sum::<f64>() / n;
    (nll, steps)
}

/// Sweeps the inference-time router bias over `alphas` (must include 0,
/// the baseline). Tokens are split into difficulty tertiles from the
/// baseline pass; rows come back sorted by α, each α reporting the
/// `easy`, `hard`, and `all` subsets.
pub fn counterfactual_sweep<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    data: &[u32],
    window_len: usize,
    max_windows: Option<usize>,
    alphas: &[f64],
) -> Result<Vec<CounterfactualPoint>> {
    if alphas.is_empty() {
        return Err(CoreError::Config("the α grid is empty".into()));
    }
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(CoreError::Config("the α grid must be finite".into()));
    }
    let mut grid: Vec<f64> = alphas.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    grid.dedup();
    let Some(baseline_idx) = grid.iter().position(|&a| a == 0.0) else {
        return Err(CoreError::Config(
            "the α grid must include 0 (the baseline)".into(),
        ));
    };
    if data.is_empty() {
        return Err(CoreError::Data(
            "the sweep requires a non-empty token stream".into(),
        ));
    }
    if window_len < 2 {
        return Err(CoreError::Config(
            "sweep windows need at least 2 tokens (BOS plus one target)".into(),
        ));
    }

    let cap = max_windows.unwrap_or(usize::MAX);
    let windows = WindowSampler::sequential_windows(data, window_len, cap);
    let passes: Vec<TiltedPass> = grid
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            tilted_pass(params, config, ponder, &windows, alpha, i == baseline_idx)
        })
        .collect::<Result<Vec<_>>>()?;

    let baseline = &passes[baseline_idx];
    let buckets = difficulty_buckets(&baseline.l_t, 3)?;
    let easy: Vec<usize> = (0..buckets.len()).filter(|&i| buckets[i] == 0).collect();
    let hard: Vec<usize> = (0..buckets.len()).filter(|&i| buckets[i] == 2).collect();
    let all: Vec<usize> = (0..buckets.len()).collect();
    let subsets = [("easy", easy), ("hard", hard), ("all", all)];

    let mut points = Vec::with_capacity(grid.len() * subsets.len());
    for (i, &alpha) in grid.iter().enumerate() {
        for (label, subset) in &subsets {
            let (nll, steps) = subset_means(&passes[i], subset);
            let (base_nll, _) = subset_means(baseline, subset);
            points.push(CounterfactualPoint {
                alpha,
                subset: (*label).to_string(),
                delta_loss: nll - base_nll,
                avg_steps: steps,
            });
        }
    }
    Ok(points)
}
