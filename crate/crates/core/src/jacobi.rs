//! Parallel refinement of an interleaved window,
//! `S⁽ⁿ⁺¹⁾ = Transformer(S⁽ⁿ⁾)`, with the step router re-applied to the
//! updated base states after every iteration so the refreshed mask scores
//! parameterize the next iteration's attention.
//!
//! Iteration 1 runs unmasked (all scores 1): before the first forward pass
//! there are no base states for the router to read. Between iterations,
//! observed rows keep their token embedding while latent slot k's input is
//! rewired to slot k−1's refined output. Run long enough this converges to
//! the same values sequential decoding produces.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::backbone::{
    backbone_forward, backbone_graph, final_norm, final_norm_graph, log_bias_graph,
    router_logits_graph, RowLayout,
};
use crate::config::{ModelConfig, PonderMode, PonderSettings};
use crate::error::{CoreError, Result};
use crate::interleave::{InterleavedLayout, InterleavedSequence, SlotKind};
use crate::params::{ParamLeaves, Parameters};
use crate::ponder::{router_logits, step_distribution, tail_cdf};
use crate::real::Real;
use crate::tape::{NodeId, Tape};

/// Final states and router outputs of a value-level run.
#[derive(Debug)]
pub struct JacobiOutcome<F: Real> {
    /// Post-norm states of every interleaved row after the last iteration.
    pub states: Array2<F>,
    /// Step distribution per token, `(n_tokens, K+1)`, from the final
    /// router application.
    pub step_probs: Array2<F>,
    /// Mask scores per token, `(n_tokens, K+1)`; column 0 is exactly 1.
    pub mask_scores: Array2<F>,
    /// Post-norm states after each iteration (only when requested).
    pub snapshots: Vec<Array2<F>>,
}

/// Applies the router to the base-state rows and returns
/// `(step_probs, mask_scores)`, each `(n_tokens, K+1)` with the mask's
/// column 0 forced to exactly 1.
fn apply_router<F: Real>(
    params: &Parameters<F>,
    layout: &InterleavedLayout,
    router_input: &Array2<F>,
) -> (Array2<F>, Array2<F>) {
    let n_tokens = layout.n_tokens();
    let k_max = layout.max_steps();
    let mut probs = Array2::zeros((n_tokens, k_max + 1));
    let mut scores = Array2::zeros((n_tokens, k_max + 1));
    for (t, &r) in layout.observed_rows().iter().enumerate() {
        let logits = router_logits(router_input.row(r), params);
        let s = step_distribution(&logits, F::zero());
        let w = tail_cdf(&s);
        for k in 0..=k_max {
            probs[[t, k]] = s.probs()[k];
            scores[[t, k]] = w.values()[k];
        }
        scores[[t, 0]] = F::one();
    }
    (probs, scores)
}

/// One-hot-at-K distribution and all-ones mask (the uniform-depth mode).
fn fixed_step_router<F: Real>(layout: &InterleavedLayout) -> (Array2<F>, Array2<F>) {
    let n_tokens = layout.n_tokens();
    let k_max = layout.max_steps();
    let mut probs = Array2::zeros((n_tokens, k_max + 1));
    for t in 0..n_tokens {
        probs[[t, k_max]] = F::one();
    }
    (probs, Array2::ones((n_tokens, k_max + 1)))
}

/// Flattens a `(n_tokens, K+1)` mask-score matrix into the per-row score
/// vector over the interleaved order.
fn scores_per_row<F: Real>(layout: &InterleavedLayout, scores: &Array2<F>) -> Array1<F> {
    let mut out = Array1::ones(layout.len());
    for (r, slot) in layout.slots().iter().enumerate() {
        if let SlotKind::Latent { step } = slot.kind {
            out[r] = scores[[slot.parent, step]];
        }
    }
    out
}

/// Value-level parallel refinement: `n_iters` full passes over the window.
/// Returns the final states, the final router outputs, and per-iteration
/// snapshots when `keep_snapshots` is set.
pub fn run_jacobi<F: Real>(
    seq: &InterleavedSequence<F>,
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    n_iters: usize,
    keep_snapshots: bool,
) -> Result<JacobiOutcome<F>> {
    if n_iters == 0 {
        return Err(CoreError::Config("refinement needs at least one iteration".into()));
    }
    let layout = &seq.layout;
    let positions = layout.positions();
    let mut inputs = seq.states.clone();
    let mut router_out: Option<(Array2<F>, Array2<F>)> = None;
    let mut states = Array2::zeros(inputs.dim());
    let mut snapshots = Vec::new();

    for iter in 1..=n_iters {
        let row_scores = match (&router_out, layout.max_steps()) {
            (Some((_, scores)), k) if k > 0 => Some(scores_per_row(layout, scores)),
            _ => None,
        };
        let raw = match backbone_forward(params, config, &inputs, &positions, row_scores.as_ref())
        {
            Ok(raw) => raw,
            Err(CoreError::Numeric(msg)) => {
                return Err(CoreError::Numeric(format!(
                    "refinement iteration {iter}: {msg}"
                )))
            }
            Err(e) => return Err(e),
        };
        let h = final_norm(params, config, &raw);
        if !h.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Numeric(format!(
                "non-finite states at refinement iteration {iter}"
            )));
        }
        router_out = Some(match ponder.mode {
            PonderMode::FixedStep => fixed_step_router(layout),
            PonderMode::Adaptive => {
                let router_in = if config.router_post_norm { &h } else { &raw };
                apply_router(params, layout, router_in)
            }
        });
        states = h;
        if keep_snapshots {
            snapshots.push(states.clone());
        }
        if iter < n_iters {
            for (r, slot) in layout.slots().iter().enumerate() {
                if matches!(slot.kind, SlotKind::Latent { .. }) {
                    let prev = states.row(r - 1).to_owned();
                    inputs.row_mut(r).assign(&prev);
                }
            }
        }
    }

    let (step_probs, mask_scores) = router_out.expect("at least one iteration ran");
    Ok(JacobiOutcome { states, step_probs, mask_scores, snapshots })
}

/// Node handles of the differentiable refinement graph.
pub struct JacobiGraph {
    /// Post-norm states of every interleaved row, final iteration, `(M, d)`.
    pub h_final: NodeId,
    /// Step distribution per token from the final router application,
    /// `(n_tokens, K+1)`.
    pub step_probs: NodeId,
    /// Mask scores per token, `(n_tokens, K+1)`, column 0 exactly 1.
    pub mask_scores: NodeId,
}

/// Builds the full unrolled refinement on the tape: `ponder.jacobi_iters`
/// backbone passes with router re-application between them. Gradients flow
/// through every iteration, including the mask-score path into the router.
pub fn jacobi_graph<F: Real>(
    tape: &mut Tape<F>,
    tokens: &[u32],
    leaves: &ParamLeaves,
    layout: &InterleavedLayout,
    config: &ModelConfig,
    ponder: &PonderSettings,
) -> JacobiGraph {
    let n_tokens = layout.n_tokens();
    let k_max = layout.max_steps();
    let m = layout.len();
    assert_eq!(tokens.len(), n_tokens, "layout/token count mismatch");

    let ids = Arc::new(layout.initial_ids(tokens));
    let mut x0 = tape.embed_rows(leaves.embedding, ids);
    if matches!(ponder.latent_init, crate::config::LatentInit::Zeros) {
        let keep = Array2::from_shape_fn((m, 1), |(r, _)| {
            if matches!(layout.info(r).kind, SlotKind::Observed) { F::one() } else { F::zero() }
        });
        let keep = tape.leaf(keep);
        x0 = tape.rows_scaled_by_col(x0, keep, 0);
    }
    let row_layout = RowLayout { positions: Arc::new(layout.positions()) };
    let observed = Arc::new(layout.observed_rows());
    let update_index = Arc::new(layout.update_index());

    let mut x = x0;
    let mut router_nodes: Option<(NodeId, NodeId)> = None;
    let mut h = x0;
    for iter in 1..=ponder.jacobi_iters {
        let bias = match (router_nodes, k_max) {
            (Some((_, mask_scores)), k) if k > 0 => {
                let ones = tape.leaf(Array2::ones((n_tokens, 1)));
                let latent = tape.slice_cols(mask_scores, 1, k);
                let exact = tape.concat_cols(vec![ones, latent]);
                let flat = tape.reshape_row_vec(exact);
                Some(log_bias_graph(tape, flat))
            }
            _ => None,
        };
        let raw = backbone_graph(tape, x, leaves, &row_layout, bias, config);
        h = final_norm_graph(tape, raw, leaves, config);
        router_nodes = Some(match ponder.mode {
            PonderMode::FixedStep => {
                let (probs, scores) = fixed_step_router::<F>(layout);
                (tape.leaf(probs), tape.leaf(scores))
            }
            PonderMode::Adaptive => {
                let router_src = if config.router_post_norm { h } else { raw };
                let h0 = tape.select_rows(router_src, observed.clone());
                let logits = router_logits_graph(tape, h0, leaves);
                let probs = tape.masked_softmax(logits, None, crate::attention::Mask::Full);
                let scores = tape.reverse_cumsum_rows(probs);
                (probs, scores)
            }
        });
        if iter < ponder.jacobi_iters {
            let stacked = tape.concat_rows(vec![x0, h]);
            x = tape.select_rows(stacked, update_index.clone());
        }
    }

    let (step_probs, mask_scores) = router_nodes.expect("jacobi_iters >= 1 validated");
    JacobiGraph { h_final: h, step_probs, mask_scores }
}
