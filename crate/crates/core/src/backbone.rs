//! Transformer layer stack: pre-norm attention and SwiGLU blocks with
//! rotary positions, plus the final norm and output heads.
//!
//! Two independent code paths cover the same math:
//!
//! * **Graph builders** ([`backbone_graph`] and friends) push operations
//!   onto a [`Tape`] for training and gradient checking.
//! * **Value-level forward** ([`backbone_forward`]) computes the identical
//!   function directly on arrays for decoding and evaluation.
//!
//! Both accept an optional per-key-column mask score (the ponder weight
//! `w`), applied inside attention either as a dense log-bias or through the
//! augmented query/key/value construction, selected by
//! [`ModelConfig::attention`].

use std::sync::Arc;

use ndarray::{s, Array1, Array2};

use crate::attention::{
    attention_augmented, attention_soft_mask, AttentionMaskSpec, Mask, LOG_CLAMP_FLOOR,
};
use crate::config::{AttentionImpl, ModelConfig};
use crate::error::Result;
use crate::params::{LayerLeaves, ParamLeaves, Parameters};
use crate::real::{fr, Real};
use crate::tape::{apply_rope, inv_rms, NodeId, Tape};

/// Shared description of where each row sits: its rotary wall position and
/// which key columns it may attend to (causal over row order), plus the
/// optional per-column mask score node (a `(1, n)` row of scores in
/// `(0, 1]`).
#[derive(Clone)]
pub struct RowLayout {
    pub positions: Arc<Vec<usize>>,
}

impl RowLayout {
    pub fn new(positions: Vec<usize>) -> Self {
        Self { positions: Arc::new(positions) }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Turns a `(1, n)` row of mask scores into the clamped log-bias row used
/// by the attention graph.
pub fn log_bias_graph<F: Real>(tape: &mut Tape<F>, scores_row: NodeId) -> NodeId {
    let clamped = tape.clamp_min(scores_row, fr::<F>(LOG_CLAMP_FLOOR));
    tape.ln(clamped)
}

fn attention_block_graph<F: Real>(
    tape: &mut Tape<F>,
    x: NodeId,
    layer: &LayerLeaves,
    layout: &RowLayout,
    log_bias: Option<NodeId>,
    config: &ModelConfig,
) -> NodeId {
    let (m, _) = tape.value(x).dim();
    let dh = config.d_head;
    let eps = fr::<F>(config.norm_eps);

    let xn = tape.rms_norm(x, layer.attn_norm_gain, eps);
    let q = tape.matmul_transb(xn, layer.wq, F::one());
    let k = tape.matmul_transb(xn, layer.wk, F::one());
    let v = tape.matmul_transb(xn, layer.wv, F::one());
    let q = tape.rope(q, layout.positions.clone(), dh, config.rope_base);
    let k = tape.rope(k, layout.positions.clone(), dh, config.rope_base);

    let mut heads = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let out_h = match (config.attention, log_bias) {
            (AttentionImpl::SoftMask, bias) => {
                let scale = F::one() / fr::<F>(dh as f64).sqrt();
                let scores = tape.matmul_transb(qh, kh, scale);
                let probs = tape.masked_softmax(scores, bias, Mask::Causal);
                tape.matmul(probs, vh)
            }
            (AttentionImpl::Augmented, Some(bias)) => {
                // Width-(d+1) construction: an extra all-ones query column
                // paired with a log-score key column reproduces the additive
                // bias, so plain masked attention in d+1 dims matches the
                // soft-mask path exactly.
                let d_aug = dh + 1;
                let rescale = (fr::<F>(d_aug as f64) / fr::<F>(dh as f64)).sqrt();
                let q_scaled = tape.scale(qh, rescale);
                let ones = tape.leaf(Array2::from_elem((m, 1), fr::<F>((d_aug as f64).sqrt())));
                let zeros = tape.leaf(Array2::zeros((m, 1)));
                let bias_col = tape.transpose(bias);
                let q_aug = tape.concat_cols(vec![q_scaled, ones]);
                let k_aug = tape.concat_cols(vec![kh, bias_col]);
                let v_aug = tape.concat_cols(vec![vh, zeros]);
                let scale = F::one() / fr::<F>(d_aug as f64).sqrt();
                let scores = tape.matmul_transb(q_aug, k_aug, scale);
                let probs = tape.masked_softmax(scores, None, Mask::Causal);
                let mixed = tape.matmul(probs, v_aug);
                tape.slice_cols(mixed, 0, dh)
            }
            (AttentionImpl::Augmented, None) => {
                let scale = F::one() / fr::<F>(dh as f64).sqrt();
                let scores = tape.matmul_transb(qh, kh, scale);
                let probs = tape.masked_softmax(scores, None, Mask::Causal);
                tape.matmul(probs, vh)
            }
        };
        heads.push(out_h);
    }
    let merged = if heads.len() == 1 { heads[0] } else { tape.concat_cols(heads) };
    let proj = tape.matmul_transb(merged, layer.wo, F::one());
    tape.add(x, proj)
}

fn mlp_block_graph<F: Real>(
    tape: &mut Tape<F>,
    x: NodeId,
    layer: &LayerLeaves,
    config: &ModelConfig,
) -> NodeId {
    let eps = fr::<F>(config.norm_eps);
    let xn = tape.rms_norm(x, layer.mlp_norm_gain, eps);
    let gate = tape.matmul_transb(xn, layer.w_gate, F::one());
    let gate = tape.silu(gate);
    let up = tape.matmul_transb(xn, layer.w_up, F::one());
    let prod = tape.mul(gate, up);
    let down = tape.matmul_transb(prod, layer.w_down, F::one());
    tape.add(x, down)
}

/// Layer stack only — no final norm, no heads. Zero layers is the
/// identity. `log_bias`, when present, must be a `(1, n)` row holding the
/// natural log of clamped per-column mask scores (see [`log_bias_graph`]).
pub fn backbone_graph<F: Real>(
    tape: &mut Tape<F>,
    x: NodeId,
    leaves: &ParamLeaves,
    layout: &RowLayout,
    log_bias: Option<NodeId>,
    config: &ModelConfig,
) -> NodeId {
    let mut h = x;
    for layer in &leaves.layers {
        h = attention_block_graph(tape, h, layer, layout, log_bias, config);
        h = mlp_block_graph(tape, h, layer, config);
    }
    h
}

/// Final RMS norm over the layer-stack output.
pub fn final_norm_graph<F: Real>(
    tape: &mut Tape<F>,
    x: NodeId,
    leaves: &ParamLeaves,
    config: &ModelConfig,
) -> NodeId {
    tape.rms_norm(x, leaves.final_norm_gain, fr::<F>(config.norm_eps))
}

/// Vocabulary logits: `h · lm_headᵀ` (untied, bias-free).
pub fn lm_logits_graph<F: Real>(tape: &mut Tape<F>, h: NodeId, leaves: &ParamLeaves) -> NodeId {
    tape.matmul_transb(h, leaves.lm_head, F::one())
}

/// Ponder-step logits: `h · routerᵀ`, one row per input row, `K+1` columns.
pub fn router_logits_graph<F: Real>(
    tape: &mut Tape<F>,
    h: NodeId,
    leaves: &ParamLeaves,
) -> NodeId {
    tape.matmul_transb(h, leaves.router, F::one())
}

/// Row-wise RMS normalisation with a learned per-channel gain, value level.
pub fn rms_norm_rows<F: Real>(x: &Array2<F>, gain: &Array2<F>, eps: F) -> Array2<F> {
    let (m, d) = x.dim();
    debug_assert_eq!(gain.dim(), (1, d));
    let mut out = Array2::zeros((m, d));
    for r in 0..m {
        let ir = inv_rms(&x.row(r).to_owned(), eps);
        for c in 0..d {
            out[[r, c]] = x[[r, c]] * ir * gain[[0, c]];
        }
    }
    out
}

fn silu_rows<F: Real>(x: &Array2<F>) -> Array2<F> {
    x.mapv(|v| v / (F::one() + (-v).exp()))
}

/// Value-level layer stack over a full row matrix, causal over row order.
/// `mask_scores`, when present, holds the per-row ponder weight `w` in
/// `(0, 1]` (observed tokens carry 1); it is applied to every attention
/// call as a key-column bias. Zero layers is the identity.
pub fn backbone_forward<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    x: &Array2<F>,
    positions: &[usize],
    mask_scores: Option<&Array1<F>>,
) -> Result<Array2<F>> {
    let m = x.dim().0;
    assert_eq!(positions.len(), m, "one rotary position per row");
    if let Some(w) = mask_scores {
        assert_eq!(w.len(), m, "one mask score per row");
    }
    let spec = match mask_scores {
        Some(w) => AttentionMaskSpec::new(Mask::Causal, w.clone()),
        None => AttentionMaskSpec::neutral(Mask::Causal, m),
    };
    forward_layers(params, config, x.clone(), positions, &spec)
}

fn forward_layers<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    mut x: Array2<F>,
    positions: &[usize],
    spec: &AttentionMaskSpec<F>,
) -> Result<Array2<F>> {
    let dh = config.d_head;
    let eps = fr::<F>(config.norm_eps);
    for layer in &params.layers {
        let xn = rms_norm_rows(&x, &layer.attn_norm_gain, eps);
        let mut q = xn.dot(&layer.wq.t());
        let mut k = xn.dot(&layer.wk.t());
        let v = xn.dot(&layer.wv.t());
        apply_rope(&mut q, positions, dh, config.rope_base, false);
        apply_rope(&mut k, positions, dh, config.rope_base, false);

        let mut merged = Array2::zeros(x.dim());
        for h in 0..config.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols).to_owned();
            let kh = k.slice(cols).to_owned();
            let vh = v.slice(cols).to_owned();
            let out_h = match config.attention {
                AttentionImpl::SoftMask => attention_soft_mask(&qh, &kh, &vh, spec)?,
                AttentionImpl::Augmented => attention_augmented(&qh, &kh, &vh, spec)?,
            };
            merged.slice_mut(cols).assign(&out_h);
        }
        x = x + merged.dot(&layer.wo.t());

        let xn = rms_norm_rows(&x, &layer.mlp_norm_gain, eps);
        let gate = silu_rows(&xn.dot(&layer.w_gate.t()));
        let up = xn.dot(&layer.w_up.t());
        x = x + (gate * up).dot(&layer.w_down.t());
    }
    Ok(x)
}

/// Value-level final RMS norm.
pub fn final_norm<F: Real>(params: &Parameters<F>, config: &ModelConfig, x: &Array2<F>) -> Array2<F> {
    rms_norm_rows(x, &params.final_norm_gain, fr::<F>(config.norm_eps))
}

/// Value-level vocabulary logits.
pub fn lm_logits<F: Real>(params: &Parameters<F>, h: &Array2<F>) -> Array2<F> {
    h.dot(&params.lm_head.t())
}

/// Incremental decoding state: per-layer keys and values (keys stored
/// post-rotary) plus, per cached entry, its mask score and wall position.
/// Entries below the hard-stop threshold are never pushed, so a pruned
/// ponder step simply has no column anywhere.
pub struct BackboneCache<F: Real> {
    per_layer: Vec<LayerKv<F>>,
    mask_scores: Vec<F>,
    positions: Vec<usize>,
}

struct LayerKv<F: Real> {
    k: RowBuffer<F>,
    v: RowBuffer<F>,
}

/// Growable row matrix with doubling capacity, so cached keys stay
/// contiguous for the attention matmuls.
struct RowBuffer<F: Real> {
    data: Array2<F>,
    len: usize,
}

impl<F: Real> RowBuffer<F> {
    fn new(width: usize) -> Self {
        Self { data: Array2::zeros((0, width)), len: 0 }
    }

    fn push_rows(&mut self, rows: &Array2<F>) {
        let (m, w) = rows.dim();
        debug_assert_eq!(w, self.data.dim().1);
        if self.len + m > self.data.dim().0 {
            let cap = (self.data.dim().0 * 2).max(self.len + m).max(64);
            let mut grown = Array2::zeros((cap, w));
            grown
                .slice_mut(s![..self.len, ..])
                .assign(&self.data.slice(s![..self.len, ..]));
            self.data = grown;
        }
        self.data
            .slice_mut(s![self.len..self.len + m, ..])
            .assign(rows);
        self.len += m;
    }

    fn view(&self) -> ndarray::ArrayView2<'_, F> {
        self.data.slice(s![..self.len, ..])
    }
}

impl<F: Real> BackboneCache<F> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            per_layer: (0..config.n_layers)
                .map(|_| LayerKv {
                    k: RowBuffer::new(config.d_model),
                    v: RowBuffer::new(config.d_model),
                })
                .collect(),
            mask_scores: Vec::new(),
            positions: Vec::new(),
        }
    }

    /// Number of cached entries (attendable key columns).
    pub fn len(&self) -> usize {
        self.mask_scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask_scores.is_empty()
    }

    /// Mask score of each cached entry, in insertion order.
    pub fn mask_scores(&self) -> &[F] {
        &self.mask_scores
    }

    /// Wall position of each cached entry, in insertion order.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }
}

/// Runs `x_new` through the layer stack against everything already cached,
/// appending the new entries' keys/values as it goes. Row `i` of the new
/// block attends to all prior cache entries and to block rows `0..=i`.
/// Returns the layer-stack output for the new rows (pre final norm).
pub fn cache_extend<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    cache: &mut BackboneCache<F>,
    x_new: &Array2<F>,
    new_positions: &[usize],
    new_mask_scores: &[F],
) -> Result<Array2<F>> {
    let m_new = x_new.dim().0;
    assert_eq!(new_positions.len(), m_new, "one position per new row");
    assert_eq!(new_mask_scores.len(), m_new, "one mask score per new row");
    assert_eq!(cache.per_layer.len(), params.layers.len(), "cache layer count");

    let n_old = cache.len();
    let n_total = n_old + m_new;
    let dh = config.d_head;
    let eps = fr::<F>(config.norm_eps);

    cache.mask_scores.extend_from_slice(new_mask_scores);
    cache.positions.extend_from_slice(new_positions);

    let visible =
        Array2::from_shape_fn((m_new, n_total), |(i, j)| j <= n_old + i);
    let mask = Mask::Explicit(Arc::new(visible));
    let column_bias = Array1::from_iter(cache.mask_scores.iter().copied());
    let spec = AttentionMaskSpec::new(mask, column_bias);

    let mut x = x_new.clone();
    for (layer, kv) in params.layers.iter().zip(cache.per_layer.iter_mut()) {
        let xn = rms_norm_rows(&x, &layer.attn_norm_gain, eps);
        let mut q = xn.dot(&layer.wq.t());
        let mut k = xn.dot(&layer.wk.t());
        let v = xn.dot(&layer.wv.t());
        apply_rope(&mut q, new_positions, dh, config.rope_base, false);
        apply_rope(&mut k, new_positions, dh, config.rope_base, false);
        kv.k.push_rows(&k);
        kv.v.push_rows(&v);

        let k_all = kv.k.view();
        let v_all = kv.v.view();
        let mut merged = Array2::zeros(x.dim());
        for h in 0..config.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols).to_owned();
            let kh = k_all.slice(cols).to_owned();
            let vh = v_all.slice(cols).to_owned();
            let out_h = match config.attention {
                AttentionImpl::SoftMask => attention_soft_mask(&qh, &kh, &vh, &spec)?,
                AttentionImpl::Augmented => attention_augmented(&qh, &kh, &vh, &spec)?,
            };
            merged.slice_mut(cols).assign(&out_h);
        }
        x = x + merged.dot(&layer.wo.t());

        let xn = rms_norm_rows(&x, &layer.mlp_norm_gain, eps);
        let gate = silu_rows(&xn.dot(&layer.w_gate.t()));
        let up = xn.dot(&layer.w_up.t());
        x = x + (gate * up).dot(&layer.w_down.t());
    }
    Ok(x)
}
