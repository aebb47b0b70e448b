//! Masked attention in two interchangeable forms.
//!
//! Both paths compute the same function: boolean (causal/padding) masking
//! plus an additive per-key-column `log w` bias that smoothly suppresses
//! latent-slot columns. The dense form adds the bias to the logits
//! directly. The augmented form widens the head dimension by one and folds
//! the bias into the extra channel, so a plain boolean-masked dot-product
//! attention produces identical output — the layout fused attention kernels
//! accept. Because the augmented head dimension changes the softmax scale
//! from 1/√d to 1/√d′, the original Q block is rescaled by √(d′/d) to keep
//! the two paths exactly equivalent.

use crate::error::{CoreError, Result};
use crate::real::{fr, Real};
use ndarray::{Array1, Array2, Axis};
use std::sync::Arc;

/// Mask scores are clamped here before the logarithm. The resulting logit
/// (about −69 nats) suppresses a column beyond anything representable in
/// single precision, so clamped columns behave like hard-masked ones.
pub const LOG_CLAMP_FLOOR: f64 = 1e-30;

/// Boolean visibility pattern for attention scores.
#[derive(Clone, Debug)]
pub enum Mask {
    /// Every query sees every key.
    Full,
    /// Query row i sees key columns j ≤ i. Square score matrices only.
    Causal,
    /// Arbitrary visibility; `true` means the entry participates.
    Explicit(Arc<Array2<bool>>),
}

impl Mask {
    pub fn visible(&self, row: usize, col: usize) -> bool {
        match self {
            Mask::Full => true,
            Mask::Causal => col <= row,
            Mask::Explicit(m) => m[[row, col]],
        }
    }
}

/// Boolean mask plus the per-key-column mask score `w`.
///
/// Observed-token columns carry 1; latent slot k of token t carries
/// w_{t,k}. Values must lie in (0, 1]; they are clamped at
/// [`LOG_CLAMP_FLOOR`] before the logarithm is taken.
#[derive(Clone, Debug)]
pub struct AttentionMaskSpec<F: Real> {
    pub mask: Mask,
    pub column_bias: Array1<F>,
}

impl<F: Real> AttentionMaskSpec<F> {
    pub fn new(mask: Mask, column_bias: Array1<F>) -> Self {
        Self { mask, column_bias }
    }

    /// All-ones bias over `n` key columns: plain masked attention.
    pub fn neutral(mask: Mask, n: usize) -> Self {
        Self { mask, column_bias: Array1::ones(n) }
    }

    /// Natural log of the clamped column bias.
    pub fn log_bias(&self) -> Array1<F> {
        let floor = fr::<F>(LOG_CLAMP_FLOOR);
        self.column_bias.mapv(|w| w.max(floor).ln())
    }
}

fn ensure_finite<F: Real>(name: &str, x: &Array2<F>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::Numeric(format!("non-finite entry in {name}")))
    }
}

fn check_shapes<F: Real>(
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    spec: &AttentionMaskSpec<F>,
) -> Result<()> {
    let (nq, d) = q.dim();
    let (nk, dk) = k.dim();
    let (nv, _) = v.dim();
    if d != dk {
        return Err(CoreError::Shape(format!(
            "query dim {d} does not match key dim {dk}"
        )));
    }
    if nk != nv {
        return Err(CoreError::Shape(format!(
            "key rows {nk} do not match value rows {nv}"
        )));
    }
    if spec.column_bias.len() != nk {
        return Err(CoreError::Shape(format!(
            "column bias length {} does not match key rows {nk}",
            spec.column_bias.len()
        )));
    }
    if matches!(spec.mask, Mask::Causal) && nq != nk {
        return Err(CoreError::Shape(format!(
            "causal mask requires square scores, got {nq}x{nk}"
        )));
    }
    if let Mask::Explicit(m) = &spec.mask {
        if m.dim() != (nq, nk) {
            return Err(CoreError::Shape(format!(
                "explicit mask {:?} does not match scores {nq}x{nk}",
                m.dim()
            )));
        }
    }
    ensure_finite("Q", q)?;
    ensure_finite("K", k)?;
    ensure_finite("V", v)?;
    Ok(())
}

/// Row-wise softmax with masked entries excluded (set to zero probability).
/// A fully masked row yields an all-zero row rather than NaN.
pub(crate) fn masked_softmax_rows<F: Real>(mut scores: Array2<F>, mask: &Mask) -> Array2<F> {
    let (nq, nk) = scores.dim();
    for r in 0..nq {
        let mut max = F::neg_infinity();
        for c in 0..nk {
            if mask.visible(r, c) && scores[[r, c]] > max {
                max = scores[[r, c]];
            }
        }
        if !max.is_finite() {
            for c in 0..nk {
                scores[[r, c]] = F::zero();
            }
            continue;
        }
        let mut sum = F::zero();
        for c in 0..nk {
            if mask.visible(r, c) {
                let e = (scores[[r, c]] - max).exp();
                scores[[r, c]] = e;
                sum = sum + e;
            } else {
                scores[[r, c]] = F::zero();
            }
        }
        if sum > F::zero() {
            for c in 0..nk {
                scores[[r, c]] = scores[[r, c]] / sum;
            }
        }
    }
    scores
}

/// Dense log-bias attention: row-softmax(QKᵀ/√d + M + log w)·V, the log-w
/// term broadcast per key column.
pub fn attention_soft_mask<F: Real>(
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    spec: &AttentionMaskSpec<F>,
) -> Result<Array2<F>> {
    check_shapes(q, k, v, spec)?;
    let d = q.dim().1;
    let scale = F::one() / fr::<F>(d as f64).sqrt();
    let mut scores = q.dot(&k.t()) * scale;
    let log_bias = spec.log_bias();
    for mut row in scores.axis_iter_mut(Axis(0)) {
        row += &log_bias;
    }
    let probs = masked_softmax_rows(scores, &spec.mask);
    Ok(probs.dot(v))
}

/// Augmented-QKV attention: Q′ = [√(d′/d)·Q, √d′·1], K′ = [K, log w],
/// V′ = [V, 0] with d′ = d+1; plain boolean-masked attention over d′ then
/// equals [`attention_soft_mask`], because
/// Q′K′ᵀ/√d′ = QKᵀ/√d + 1·(log w)ᵀ.
pub fn attention_augmented<F: Real>(
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    spec: &AttentionMaskSpec<F>,
) -> Result<Array2<F>> {
    check_shapes(q, k, v, spec)?;
    let (nq, d) = q.dim();
    let (nk, dv) = v.dim();
    let d_aug = d + 1;
    let rescale = fr::<F>(d_aug as f64 / d as f64).sqrt();
    let q_extra = fr::<F>(d_aug as f64).sqrt();
    let log_bias = spec.log_bias();

    let mut q_aug = Array2::zeros((nq, d_aug));
    q_aug.slice_mut(ndarray::s![.., ..d]).assign(&(q * rescale));
    q_aug.column_mut(d).fill(q_extra);

    let mut k_aug = Array2::zeros((nk, d_aug));
    k_aug.slice_mut(ndarray::s![.., ..d]).assign(k);
    k_aug.column_mut(d).assign(&log_bias);

    let mut v_aug = Array2::zeros((nk, dv + 1));
    v_aug.slice_mut(ndarray::s![.., ..dv]).assign(v);

    let scale = F::one() / fr::<F>(d_aug as f64).sqrt();
    let scores = q_aug.dot(&k_aug.t()) * scale;
    let probs = masked_softmax_rows(scores, &spec.mask);
    let out = probs.dot(&v_aug);
    Ok(out.slice(ndarray::s![.., ..dv]).to_owned())
}
