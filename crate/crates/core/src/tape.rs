//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Tape`] records a computation as it runs (define-by-run): every
//! operation evaluates eagerly, stores its result, and remembers its
//! parents. [`Tape::backward`] then walks the record in reverse and
//! accumulates gradients for every node. The op set is exactly what the
//! interleaved-pondering training graph needs — matrix products, RMS
//! normalization, rotary positions, masked softmax with an additive
//! per-key-column bias, reverse cumulative sums for tail-CDF mask scores,
//! row gather/scatter plumbing, and a fused cross-entropy sum.
//!
//! Values are generic over [`Real`] so the same graph code runs in f32 for
//! training and f64 for finite-difference gradient verification.

use crate::attention::Mask;
use crate::real::{fr, Real};
use ndarray::{Array1, Array2, Axis};
use std::sync::Arc;

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<F: Real> {
    Leaf,
    /// out[r] = table[ids[r]] (row gather from an embedding table node).
    EmbedRows { table: NodeId, ids: Arc<Vec<usize>> },
    /// a · b
    MatMul { a: NodeId, b: NodeId },
    /// scale · (a · bᵀ)
    MatMulTransB { a: NodeId, b: NodeId, scale: F },
    Add { a: NodeId, b: NodeId },
    /// Elementwise product.
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: F },
    /// x · σ(x) elementwise.
    Silu { x: NodeId },
    /// Per-row RMS normalization with a (1 × d) gain.
    RmsNorm { x: NodeId, gain: NodeId, eps: F },
    /// Rotary position encoding applied head-block-wise.
    Rope { x: NodeId, positions: Arc<Vec<usize>>, d_head: usize, base: f64 },
    /// Row softmax of (scores + key_bias broadcast over rows), with masked
    /// entries excluded. Value is the probability matrix.
    MaskedSoftmax { scores: NodeId, key_bias: Option<NodeId> },
    /// out[r, c] = Σ_{j ≥ c} x[r, j] (tail sums per row).
    ReverseCumsumRows { x: NodeId },
    /// Elementwise natural log (inputs must be positive; clamp first).
    Ln { x: NodeId },
    /// Elementwise max(x, floor).
    ClampMin { x: NodeId, floor: F },
    /// out[r, :] = x[r, :] · weights[r, col].
    RowsScaledByCol { x: NodeId, weights: NodeId, col: usize },
    /// Row gather: out[i] = x[idx[i]].
    SelectRows { x: NodeId, idx: Arc<Vec<usize>> },
    /// Horizontal concatenation.
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    /// out = x[:, start .. start+len].
    SliceCols { x: NodeId, start: usize, len: usize },
    Transpose { x: NodeId },
    /// (m × c) → (1 × m·c), row-major.
    ReshapeRowVec { x: NodeId },
    /// out[i, 0] = x[idx[i].0, idx[i].1].
    GatherEntries { x: NodeId, idx: Arc<Vec<(usize, usize)>> },
    /// (1 × 1) sum of all entries.
    SumAll { x: NodeId },
    /// (1 × 1) Σ_r −log softmax(logits[r])[targets[r]].
    CeSum { logits: NodeId, targets: Arc<Vec<usize>> },
}

struct Node<F: Real> {
    op: Op<F>,
    value: Array2<F>,
}

/// Gradients of one scalar output with respect to every tape node.
pub struct Gradients<F: Real> {
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient w.r.t. `id`, or None if the loss does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Option<&Array2<F>> {
        self.grads[id.0].as_ref()
    }
}

pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<F> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a (1 × 1) node.
    pub fn scalar(&self, id: NodeId) -> F {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar node");
        v[[0, 0]]
    }

    fn push(&mut self, op: Op<F>, value: Array2<F>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<F>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn embed_rows(&mut self, table: NodeId, ids: Arc<Vec<usize>>) -> NodeId {
        let t = self.value(table);
        let d = t.dim().1;
        let mut out = Array2::zeros((ids.len(), d));
        for (r, &i) in ids.iter().enumerate() {
            assert!(i < t.dim().0, "embedding row {i} out of range");
            out.row_mut(r).assign(&t.row(i));
        }
        self.push(Op::EmbedRows { table, ids }, out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim().1, vb.dim().0, "matmul inner dims");
        let out = va.dot(vb);
        self.push(Op::MatMul { a, b }, out)
    }

    pub fn matmul_transb(&mut self, a: NodeId, b: NodeId, scale: F) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim().1, vb.dim().1, "matmul_transb inner dims");
        let out = va.dot(&vb.t()) * scale;
        self.push(Op::MatMulTransB { a, b, scale }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shapes");
        let out = self.value(a) + self.value(b);
        self.push(Op::Add { a, b }, out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shapes");
        let out = self.value(a) * self.value(b);
        self.push(Op::Mul { a, b }, out)
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> NodeId {
        let out = self.value(x) * c;
        self.push(Op::Scale { x, c }, out)
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(|v| v * sigmoid(v));
        self.push(Op::Silu { x }, out)
    }

    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId, eps: F) -> NodeId {
        let v = self.value(x);
        let g = self.value(gain);
        let (m, d) = v.dim();
        assert_eq!(g.dim(), (1, d), "rms_norm gain must be (1, d)");
        let mut out = Array2::zeros((m, d));
        for r in 0..m {
            let ir = inv_rms(&v.row(r).to_owned(), eps);
            for c in 0..d {
                out[[r, c]] = v[[r, c]] * ir * g[[0, c]];
            }
        }
        self.push(Op::RmsNorm { x, gain, eps }, out)
    }

    pub fn rope(
        &mut self,
        x: NodeId,
        positions: Arc<Vec<usize>>,
        d_head: usize,
        base: f64,
    ) -> NodeId {
        let v = self.value(x);
        let (m, d) = v.dim();
        assert_eq!(m, positions.len(), "rope positions per row");
        assert_eq!(d % d_head, 0, "rope width must be a multiple of d_head");
        assert_eq!(d_head % 2, 0, "rope head dim must be even");
        let mut out = v.clone();
        apply_rope(&mut out, &positions, d_head, base, false);
        self.push(Op::Rope { x, positions, d_head, base }, out)
    }

    pub fn masked_softmax(
        &mut self,
        scores: NodeId,
        key_bias: Option<NodeId>,
        mask: Mask,
    ) -> NodeId {
        let s = self.value(scores);
        let (nq, nk) = s.dim();
        let mut eff = s.clone();
        if let Some(b) = key_bias {
            let bv = self.value(b);
            assert_eq!(bv.dim(), (1, nk), "key bias must be (1, n_keys)");
            let row = bv.row(0).to_owned();
            for mut r in eff.axis_iter_mut(Axis(0)) {
                r += &row;
            }
        }
        if matches!(mask, Mask::Causal) {
            assert_eq!(nq, nk, "causal mask requires square scores");
        }
        let probs = crate::attention::masked_softmax_rows(eff, &mask);
        self.push(Op::MaskedSoftmax { scores, key_bias }, probs)
    }

    pub fn reverse_cumsum_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (m, c) = v.dim();
        let mut out = Array2::zeros((m, c));
        for r in 0..m {
            let mut acc = F::zero();
            for j in (0..c).rev() {
                acc = acc + v[[r, j]];
                out[[r, j]] = acc;
            }
        }
        self.push(Op::ReverseCumsumRows { x }, out)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(|v| {
            debug_assert!(v > F::zero(), "ln of non-positive value");
            v.ln()
        });
        self.push(Op::Ln { x }, out)
    }

    pub fn clamp_min(&mut self, x: NodeId, floor: F) -> NodeId {
        let out = self.value(x).mapv(|v| v.max(floor));
        self.push(Op::ClampMin { x, floor }, out)
    }

    pub fn rows_scaled_by_col(&mut self, x: NodeId, weights: NodeId, col: usize) -> NodeId {
        let v = self.value(x);
        let w = self.value(weights);
        assert_eq!(v.dim().0, w.dim().0, "rows_scaled_by_col row counts");
        assert!(col < w.dim().1, "rows_scaled_by_col column index");
        let mut out = v.clone();
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let s = w[[r, col]];
            row.mapv_inplace(|e| e * s);
        }
        self.push(Op::RowsScaledByCol { x, weights, col }, out)
    }

    pub fn select_rows(&mut self, x: NodeId, idx: Arc<Vec<usize>>) -> NodeId {
        let v = self.value(x);
        let d = v.dim().1;
        let mut out = Array2::zeros((idx.len(), d));
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < v.dim().0, "select_rows index {i} out of range");
            out.row_mut(r).assign(&v.row(i));
        }
        self.push(Op::SelectRows { x, idx }, out)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let m = self.value(parts[0]).dim().0;
        let total: usize = parts.iter().map(|&p| self.value(p).dim().1).sum();
        let mut out = Array2::zeros((m, total));
        let mut at = 0;
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.dim().0, m, "concat_cols row counts");
            let w = v.dim().1;
            out.slice_mut(ndarray::s![.., at..at + w]).assign(v);
            at += w;
        }
        self.push(Op::ConcatCols { parts }, out)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let d = self.value(parts[0]).dim().1;
        let total: usize = parts.iter().map(|&p| self.value(p).dim().0).sum();
        let mut out = Array2::zeros((total, d));
        let mut at = 0;
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.dim().1, d, "concat_rows column counts");
            let m = v.dim().0;
            out.slice_mut(ndarray::s![at..at + m, ..]).assign(v);
            at += m;
        }
        self.push(Op::ConcatRows { parts }, out)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x);
        assert!(start + len <= v.dim().1, "slice_cols out of range");
        let out = v.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols { x, start, len }, out)
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).t().to_owned();
        self.push(Op::Transpose { x }, out)
    }

    pub fn reshape_row_vec(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (m, c) = v.dim();
        let out = v
            .to_owned()
            .into_shape((1, m * c))
            .expect("row-major reshape");
        self.push(Op::ReshapeRowVec { x }, out)
    }

    pub fn gather_entries(&mut self, x: NodeId, idx: Arc<Vec<(usize, usize)>>) -> NodeId {
        let v = self.value(x);
        let mut out = Array2::zeros((idx.len(), 1));
        for (i, &(r, c)) in idx.iter().enumerate() {
            out[[i, 0]] = v[[r, c]];
        }
        self.push(Op::GatherEntries { x, idx }, out)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: F = self.value(x).iter().copied().fold(F::zero(), |a, b| a + b);
        self.push(Op::SumAll { x }, Array2::from_elem((1, 1), s))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.scale(s, F::one() / fr::<F>(n as f64))
    }

    pub fn ce_sum(&mut self, logits: NodeId, targets: Arc<Vec<usize>>) -> NodeId {
        let l = self.value(logits);
        let (m, vocab) = l.dim();
        assert_eq!(m, targets.len(), "one target per logits row");
        let mut total = F::zero();
        for r in 0..m {
            let t = targets[r];
            assert!(t < vocab, "target {t} out of vocab {vocab}");
            let row = l.row(r);
            total = total + (log_sum_exp(&row.to_owned()) - row[t]);
        }
        self.push(Op::CeSum { logits, targets }, Array2::from_elem((1, 1), total))
    }

    /// Backpropagate from a (1 × 1) loss node; returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Gradients<F> {
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Array2<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), F::one()));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(grads: &mut [Option<Array2<F>>], id: NodeId, delta: Array2<F>) {
        match &mut grads[id.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn backward_node(&self, i: usize, g: &Array2<F>, grads: &mut Vec<Option<Array2<F>>>) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::EmbedRows { table, ids } => {
                let t = self.value(*table);
                let mut gt = Array2::zeros(t.dim());
                for (r, &row) in ids.iter().enumerate() {
                    let mut dst = gt.row_mut(row);
                    dst += &g.row(r);
                }
                Self::accumulate(grads, *table, gt);
            }
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                Self::accumulate(grads, *a, g.dot(&vb.t()));
                Self::accumulate(grads, *b, va.t().dot(g));
            }
            Op::MatMulTransB { a, b, scale } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                Self::accumulate(grads, *a, g.dot(vb) * *scale);
                Self::accumulate(grads, *b, g.t().dot(va) * *scale);
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                Self::accumulate(grads, *a, g * vb);
                Self::accumulate(grads, *b, g * va);
            }
            Op::Scale { x, c } => {
                Self::accumulate(grads, *x, g * *c);
            }
            Op::Silu { x } => {
                let v = self.value(*x);
                let gx = ndarray::Zip::from(g).and(v).map_collect(|&gi, &xi| {
                    let s = sigmoid(xi);
                    gi * s * (F::one() + xi * (F::one() - s))
                });
                Self::accumulate(grads, *x, gx);
            }
            Op::RmsNorm { x, gain, eps } => {
                let v = self.value(*x);
                let gn = self.value(*gain);
                let (m, d) = v.dim();
                let inv_d = F::one() / fr::<F>(d as f64);
                let mut gx = Array2::zeros((m, d));
                let mut gg = Array2::zeros((1, d));
                for r in 0..m {
                    let ir = inv_rms(&v.row(r).to_owned(), *eps);
                    let mut dot = F::zero();
                    for c in 0..d {
                        dot = dot + g[[r, c]] * gn[[0, c]] * v[[r, c]];
                    }
                    let ir3 = ir * ir * ir;
                    for c in 0..d {
                        gx[[r, c]] =
                            ir * g[[r, c]] * gn[[0, c]] - ir3 * inv_d * dot * v[[r, c]];
                        gg[[0, c]] = gg[[0, c]] + g[[r, c]] * v[[r, c]] * ir;
                    }
                }
                Self::accumulate(grads, *x, gx);
                Self::accumulate(grads, *gain, gg);
            }
            Op::Rope { x, positions, d_head, base } => {
                let mut gx = g.clone();
                apply_rope(&mut gx, positions, *d_head, *base, true);
                Self::accumulate(grads, *x, gx);
            }
            Op::MaskedSoftmax { scores, key_bias } => {
                let p = &self.nodes[i].value;
                let (nq, nk) = p.dim();
                let mut gs = Array2::zeros((nq, nk));
                for r in 0..nq {
                    let mut dot = F::zero();
                    for c in 0..nk {
                        dot = dot + g[[r, c]] * p[[r, c]];
                    }
                    for c in 0..nk {
                        gs[[r, c]] = p[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                if let Some(b) = key_bias {
                    let gb = gs.sum_axis(Axis(0)).insert_axis(Axis(0));
                    Self::accumulate(grads, *b, gb);
                }
                Self::accumulate(grads, *scores, gs);
            }
            Op::ReverseCumsumRows { x } => {
                let (m, c) = g.dim();
                let mut gx = Array2::zeros((m, c));
                for r in 0..m {
                    let mut acc = F::zero();
                    for j in 0..c {
                        acc = acc + g[[r, j]];
                        gx[[r, j]] = acc;
                    }
                }
                Self::accumulate(grads, *x, gx);
            }
            Op::Ln { x } => {
                let v = self.value(*x);
                Self::accumulate(grads, *x, g / v);
            }
            Op::ClampMin { x, floor } => {
                let v = self.value(*x);
                let gx = ndarray::Zip::from(g)
                    .and(v)
                    .map_collect(|&gi, &xi| if xi > *floor { gi } else { F::zero() });
                Self::accumulate(grads, *x, gx);
            }
            Op::RowsScaledByCol { x, weights, col } => {
                let v = self.value(*x);
                let w = self.value(*weights);
                let (m, d) = v.dim();
                let mut gx = Array2::zeros((m, d));
                let mut gw = Array2::zeros(w.dim());
                for r in 0..m {
                    let s = w[[r, *col]];
                    let mut dot = F::zero();
                    for c in 0..d {
                        gx[[r, c]] = g[[r, c]] * s;
                        dot = dot + g[[r, c]] * v[[r, c]];
                    }
                    gw[[r, *col]] = dot;
                }
                Self::accumulate(grads, *x, gx);
                Self::accumulate(grads, *weights, gw);
            }
            Op::SelectRows { x, idx } => {
                let v = self.value(*x);
                let mut gx = Array2::zeros(v.dim());
                for (r, &row) in idx.iter().enumerate() {
                    let mut dst = gx.row_mut(row);
                    dst += &g.row(r);
                }
                Self::accumulate(grads, *x, gx);
            }
            Op::ConcatCols { parts } => {
                let mut at = 0;
                for &p in parts {
                    let w = self.value(p).dim().1;
                    let gp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                    Self::accumulate(grads, p, gp);
                    at += w;
                }
            }
            Op::ConcatRows { parts } => {
                let mut at = 0;
                for &p in parts {
                    let m = self.value(p).dim().0;
                    let gp = g.slice(ndarray::s![at..at + m, ..]).to_owned();
                    Self::accumulate(grads, p, gp);
                    at += m;
                }
            }
            Op::SliceCols { x, start, len } => {
                let v = self.value(*x);
                let mut gx = Array2::zeros(v.dim());
                gx.slice_mut(ndarray::s![.., *start..*start + *len]).assign(g);
                Self::accumulate(grads, *x, gx);
            }
            Op::Transpose { x } => {
                Self::accumulate(grads, *x, g.t().to_owned());
            }
            Op::ReshapeRowVec { x } => {
                let dim = self.value(*x).dim();
                let gx = g.to_owned().into_shape(dim).expect("reshape gradient");
                Self::accumulate(grads, *x, gx);
            }
            Op::GatherEntries { x, idx } => {
                let v = self.value(*x);
                let mut gx = Array2::zeros(v.dim());
                for (i2, &(r, c)) in idx.iter().enumerate() {
                    gx[[r, c]] = gx[[r, c]] + g[[i2, 0]];
                }
                Self::accumulate(grads, *x, gx);
            }
            Op::SumAll { x } => {
                let v = self.value(*x);
                Self::accumulate(grads, *x, Array2::from_elem(v.dim(), g[[0, 0]]));
            }
            Op::CeSum { logits, targets } => {
                let l = self.value(*logits);
                let (m, vocab) = l.dim();
                let g0 = g[[0, 0]];
                let mut gl = Array2::zeros((m, vocab));
                for r in 0..m {
                    let row = l.row(r).to_owned();
                    let lse = log_sum_exp(&row);
                    for c in 0..vocab {
                        let p = (row[c] - lse).exp();
                        gl[[r, c]] = g0 * p;
                    }
                    gl[[r, targets[r]]] = gl[[r, targets[r]]] - g0;
                }
                Self::accumulate(grads, *logits, gl);
            }
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub(crate) fn inv_rms<F: Real>(row: &Array1<F>, eps: F) -> F {
    let d = row.len();
    let ms = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b)
        / fr::<F>(d as f64);
    F::one() / (ms + eps).sqrt()
}

fn log_sum_exp<F: Real>(row: &Array1<F>) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let sum = row.iter().map(|&v| (v - max).exp()).fold(F::zero(), |a, b| a + b);
    max + sum.ln()
}

/// In-place rotary transform. `inverse` rotates by the negative angle
/// (the transpose of the rotation, used by the backward pass).
pub(crate) fn apply_rope<F: Real>(
    x: &mut Array2<F>,
    positions: &[usize],
    d_head: usize,
    base: f64,
    inverse: bool,
) {
    let (m, d) = x.dim();
    let n_heads = d / d_head;
    for r in 0..m {
        let pos = positions[r] as f64;
        for h in 0..n_heads {
            let off = h * d_head;
            for i in 0..d_head / 2 {
                let theta = pos * base.powf(-2.0 * i as f64 / d_head as f64);
                let theta = if inverse { -theta } else { theta };
                let (sin, cos) = (fr::<F>(theta.sin()), fr::<F>(theta.cos()));
                let a = x[[r, off + 2 * i]];
                let b = x[[r, off + 2 * i + 1]];
                x[[r, off + 2 * i]] = a * cos - b * sin;
                x[[r, off + 2 * i + 1]] = a * sin + b * cos;
            }
        }
    }
}
