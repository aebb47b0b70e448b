//! Training objective: next-token cross-entropy over integrated states,
//! plus a minimum-ponder penalty that pushes down the mask scores of the
//! least-needed latent steps.
//!
//! The penalty works on difficulty proxies: each extra-step depth `i` gets
//! a batch-mean cross-entropy `ce_i` (from integrating only steps 0..=i),
//! mapped through a logistic to a penalty ratio `ρ_i = 1 − σ(10(ce_i −
//! 0.5))`. The increment `Δρ_k = max(ρ_k − ρ_{k−1}, 0)` sets which
//! fraction of step k's mask scores — the smallest ones — get penalized.
//! The proxies are treated as constants: gradients flow only through the
//! selected mask scores, pushing them down.

use std::sync::Arc;

use ndarray::Array2;

use crate::backbone::lm_logits_graph;
use crate::error::{CoreError, Result};
use crate::interleave::InterleavedLayout;
use crate::params::{ParamLeaves, Parameters};
use crate::real::{fr, Real};
use crate::tape::{NodeId, Tape};

/// `ρ(ce) = 1 − σ(10·(ce − 0.5))`: small proxy loss ⇒ ratio near 1
/// (penalize almost everything), large proxy loss ⇒ ratio near 0.
pub fn penalty_ratio(ce: f64) -> f64 {
    1.0 - 1.0 / (1.0 + (-10.0 * (ce - 0.5)).exp())
}

/// Mean next-token cross-entropy of `logits` rows against `targets`.
pub fn mean_ce_rows<F: Real>(logits: &Array2<F>, targets: &[u32]) -> Result<F> {
    if targets.is_empty() {
        return Err(CoreError::Data("no supervised positions in window".into()));
    }
    if logits.dim().0 != targets.len() {
        return Err(CoreError::Shape(format!(
            "{} logit rows for {} targets",
            logits.dim().0,
            targets.len()
        )));
    }
    let vocab = logits.dim().1;
    let mut total = F::zero();
    for (r, &t) in targets.iter().enumerate() {
        let t = t as usize;
        if t >= vocab {
            return Err(CoreError::Data(format!(
                "target id {t} outside vocabulary of size {vocab}"
            )));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let sum: F = row.iter().map(|&l| (l - max).exp()).fold(F::zero(), |a, b| a + b);
        total += max + sum.ln() - row[t];
    }
    Ok(total / fr::<F>(targets.len() as f64))
}

/// Mean cross-entropy of integrated states against next-token targets,
/// through the output head.
pub fn language_model_loss<F: Real>(
    params: &Parameters<F>,
    integrated: &Array2<F>,
    targets: &[u32],
) -> Result<F> {
    let logits = crate::backbone::lm_logits(params, integrated);
    mean_ce_rows(&logits, targets)
}

/// Everything the penalty computation decided, for metrics and analysis.
#[derive(Clone, Debug)]
pub struct AuxLossReport {
    /// Batch-mean proxy cross-entropy per depth `i = 0..=K` (empty when the
    /// penalty was computed from a ready-made ratio vector).
    pub ce: Vec<f64>,
    /// Penalty ratios `ρ_i`, `i = 0..=K`.
    pub rho: Vec<f64>,
    /// Increments `Δρ_k = max(ρ_k − ρ_{k−1}, 0)`, `k = 1..=K`.
    pub delta_rho: Vec<f64>,
    /// Fraction of step-k scores actually selected, `⌊Δρ_k·n⌋ / n`.
    pub selected_fraction: Vec<f64>,
    /// Row indices (into the score matrix) selected per step `k = 1..=K`,
    /// smallest scores first, ties broken by row order.
    pub selected: Vec<Vec<usize>>,
    /// `L_aux = λ · Σ_k mean(selected step-k scores)`.
    pub total: f64,
}

/// Selects, for each step `k ≥ 1`, the `⌊Δρ_k·n⌋` smallest mask scores in
/// column k of `scores` (one row per token, columns 0..=K) and charges λ
/// times their mean. Empty selections contribute zero.
pub fn min_ponder_penalty<F: Real>(
    scores: &Array2<F>,
    rho: &[f64],
    lambda: f64,
) -> AuxLossReport {
    let (n, cols) = scores.dim();
    assert_eq!(rho.len(), cols, "one penalty ratio per ponder depth");
    let k_max = cols - 1;

    let mut delta_rho = Vec::with_capacity(k_max);
    let mut selected_fraction = Vec::with_capacity(k_max);
    let mut selected = Vec::with_capacity(k_max);
    let mut total = 0.0;
    for k in 1..=k_max {
        let d = (rho[k] - rho[k - 1]).max(0.0);
        delta_rho.push(d);
        let count = ((d * n as f64).floor() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores[[a, k]]
                .partial_cmp(&scores[[b, k]])
                .expect("mask scores are ordered")
                .then(a.cmp(&b))
        });
        order.truncate(count);
        if count > 0 {
            let mean: f64 = order
                .iter()
                .map(|&r| scores[[r, k]].as_f64())
                .sum::<f64>()
                / count as f64;
            total += lambda * mean;
        }
        selected_fraction.push(count as f64 / n as f64);
        selected.push(order);
    }
    AuxLossReport { ce: Vec::new(), rho: rho.to_vec(), delta_rho, selected_fraction, selected, total }
}

/// [`min_ponder_penalty`] with the ratios derived from per-depth proxy
/// cross-entropies (recorded in the report).
pub fn aux_loss_from_ce<F: Real>(scores: &Array2<F>, ce: &[f64], lambda: f64) -> AuxLossReport {
    let rho: Vec<f64> = ce.iter().map(|&c| penalty_ratio(c)).collect();
    let mut report = min_ponder_penalty(scores, &rho, lambda);
    report.ce = ce.to_vec();
    report
}

/// ĥ over depths 0..=`upto`: for each token, `Σ_k s_k·h_(t,k)` with no
/// renormalization, as a `(n_tokens, d)` node.
pub fn partial_integration_graph<F: Real>(
    tape: &mut Tape<F>,
    h: NodeId,
    step_probs: NodeId,
    layout: &InterleavedLayout,
    upto: usize,
) -> NodeId {
    assert!(upto <= layout.max_steps(), "depth {upto} beyond budget");
    let mut acc: Option<NodeId> = None;
    for k in 0..=upto {
        let rows = if k == 0 { layout.observed_rows() } else { layout.latent_rows(k) };
        let h_k = tape.select_rows(h, Arc::new(rows));
        let term = tape.rows_scaled_by_col(h_k, step_probs, k);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    acc.expect("at least depth 0")
}

/// Summed (not mean) next-token cross-entropy of integrated states, as a
/// tape node; window tokens supervise positions 0..len−2 against the
/// following token.
pub fn ce_sum_graph<F: Real>(
    tape: &mut Tape<F>,
    leaves: &ParamLeaves,
    integrated: NodeId,
    tokens: &[u32],
) -> Result<NodeId> {
    if tokens.len() < 2 {
        return Err(CoreError::Data(
            "window too short to supervise any position".into(),
        ));
    }
    let n = tokens.len() - 1;
    let rows: Vec<usize> = (0..n).collect();
    let supervised = tape.select_rows(integrated, Arc::new(rows));
    let logits = lm_logits_graph(tape, supervised, leaves);
    let targets: Vec<usize> = tokens[1..].iter().map(|&t| t as usize).collect();
    Ok(tape.ce_sum(logits, Arc::new(targets)))
}
