//! Weight containers, deterministic initialization, and ordered traversal.
//!
//! Tensor traversal order is part of the artifact contract: checkpoints
//! store payloads in this order, the optimizer walks tensors in this
//! order, and gradient aggregation sums in this order, which keeps every
//! run bit-reproducible.

use crate::config::{ModelConfig, PonderSettings};
use crate::error::Result;
use crate::real::{fr, Real};
use crate::tape::{NodeId, Tape};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// One transformer layer: attention projections, gated feed-forward,
/// and the two pre-norm gains. Weights are stored (out_dim × in_dim) and
/// applied as x · Wᵀ.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F: Real> {
    pub wq: Array2<F>,
    pub wk: Array2<F>,
    pub wv: Array2<F>,
    pub wo: Array2<F>,
    pub w_gate: Array2<F>,
    pub w_up: Array2<F>,
    pub w_down: Array2<F>,
    pub attn_norm_gain: Array2<F>,
    pub mlp_norm_gain: Array2<F>,
}

/// All trainable tensors of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<F: Real> {
    /// (vocab × d_model) token embedding table.
    pub embedding: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    /// (1 × d_model) gain of the final normalization.
    pub final_norm_gain: Array2<F>,
    /// (vocab × d_model) untied, bias-free LM head.
    pub lm_head: Array2<F>,
    /// (K+1 × d_model) router producing step-count logits from the
    /// step-0 hidden state. Zero-initialized, so the initial step
    /// distribution is exactly uniform for any input.
    pub router: Array2<F>,
}

impl<F: Real> Parameters<F> {
    /// Deterministic initialization from the config seed.
    pub fn init(config: &ModelConfig, ponder: &PonderSettings) -> Result<Self> {
        config.validate()?;
        ponder.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let normal = Normal::new(0.0f64, 0.02).expect("valid stddev");
        let mut draw = |rows: usize, cols: usize| -> Array2<F> {
            Array2::from_shape_fn((rows, cols), |_| fr::<F>(normal.sample(&mut rng)))
        };
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: draw(d, d),
                wk: draw(d, d),
                wv: draw(d, d),
                wo: draw(d, d),
                w_gate: draw(config.d_ff, d),
                w_up: draw(config.d_ff, d),
                w_down: draw(d, config.d_ff),
                attn_norm_gain: Array2::ones((1, d)),
                mlp_norm_gain: Array2::ones((1, d)),
            })
            .collect();
        Ok(Parameters {
            embedding: draw(config.vocab_size, d),
            layers,
            final_norm_gain: Array2::ones((1, d)),
            lm_head: draw(config.vocab_size, d),
            router: Array2::zeros((ponder.max_steps + 1, d)),
        })
    }

    /// K implied by the router's output dimension.
    pub fn max_steps(&self) -> usize {
        self.router.dim().0 - 1
    }

    pub fn d_model(&self) -> usize {
        self.embedding.dim().1
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.dim().0
    }

    /// Total scalar count over all tensors (the N of the 6·N·D cost rule).
    pub fn param_count(&self) -> u64 {
        let mut n = 0u64;
        self.visit(|_, t| n += t.len() as u64);
        n
    }

    /// Visits every tensor with its canonical name, in the fixed
    /// traversal order.
    pub fn visit(&self, mut f: impl FnMut(&str, &Array2<F>)) {
        f("embedding", &self.embedding);
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layers.{i}.attn_norm_gain"), &l.attn_norm_gain);
            f(&format!("layers.{i}.wq"), &l.wq);
            f(&format!("layers.{i}.wk"), &l.wk);
            f(&format!("layers.{i}.wv"), &l.wv);
            f(&format!("layers.{i}.wo"), &l.wo);
            f(&format!("layers.{i}.mlp_norm_gain"), &l.mlp_norm_gain);
            f(&format!("layers.{i}.w_gate"), &l.w_gate);
            f(&format!("layers.{i}.w_up"), &l.w_up);
            f(&format!("layers.{i}.w_down"), &l.w_down);
        }
        f("final_norm.gain", &self.final_norm_gain);
        f("lm_head", &self.lm_head);
        f("router", &self.router);
    }

    /// Mutable counterpart of [`Parameters::visit`], same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Array2<F>)) {
        f("embedding", &mut self.embedding);
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layers.{i}.attn_norm_gain"), &mut l.attn_norm_gain);
            f(&format!("layers.{i}.wq"), &mut l.wq);
            f(&format!("layers.{i}.wk"), &mut l.wk);
            f(&format!("layers.{i}.wv"), &mut l.wv);
            f(&format!("layers.{i}.wo"), &mut l.wo);
            f(&format!("layers.{i}.mlp_norm_gain"), &mut l.mlp_norm_gain);
            f(&format!("layers.{i}.w_gate"), &mut l.w_gate);
            f(&format!("layers.{i}.w_up"), &mut l.w_up);
            f(&format!("layers.{i}.w_down"), &mut l.w_down);
        }
        f("final_norm.gain", &mut self.final_norm_gain);
        f("lm_head", &mut self.lm_head);
        f("router", &mut self.router);
    }

    /// Canonical tensor names in traversal order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(|n, _| names.push(n.to_string()));
        names
    }

    pub fn tensor(&self, name: &str) -> Option<&Array2<F>> {
        match name {
            "embedding" => return Some(&self.embedding),
            "final_norm.gain" => return Some(&self.final_norm_gain),
            "lm_head" => return Some(&self.lm_head),
            "router" => return Some(&self.router),
            _ => {}
        }
        let rest = name.strip_prefix("layers.")?;
        let (idx, field) = rest.split_once('.')?;
        let l = self.layers.get(idx.parse::<usize>().ok()?)?;
        Some(match field {
            "wq" => &l.wq,
            "wk" => &l.wk,
            "wv" => &l.wv,
            "wo" => &l.wo,
            "w_gate" => &l.w_gate,
            "w_up" => &l.w_up,
            "w_down" => &l.w_down,
            "attn_norm_gain" => &l.attn_norm_gain,
            "mlp_norm_gain" => &l.mlp_norm_gain,
            _ => return None,
        })
    }

    pub fn convert<G: Real>(&self) -> Parameters<G> {
        let conv = |a: &Array2<F>| a.mapv(|v| fr::<G>(v.as_f64()));
        Parameters {
            embedding: conv(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    wq: conv(&l.wq),
                    wk: conv(&l.wk),
                    wv: conv(&l.wv),
                    wo: conv(&l.wo),
                    w_gate: conv(&l.w_gate),
                    w_up: conv(&l.w_up),
                    w_down: conv(&l.w_down),
                    attn_norm_gain: conv(&l.attn_norm_gain),
                    mlp_norm_gain: conv(&l.mlp_norm_gain),
                })
                .collect(),
            final_norm_gain: conv(&self.final_norm_gain),
            lm_head: conv(&self.lm_head),
            router: conv(&self.router),
        }
    }

    /// Loads every tensor onto a tape as leaves, for graph building.
    pub fn leaves(&self, tape: &mut Tape<F>) -> ParamLeaves {
        let embedding = tape.leaf(self.embedding.clone());
        let layers = self
            .layers
            .iter()
            .map(|l| LayerLeaves {
                attn_norm_gain: tape.leaf(l.attn_norm_gain.clone()),
                wq: tape.leaf(l.wq.clone()),
                wk: tape.leaf(l.wk.clone()),
                wv: tape.leaf(l.wv.clone()),
                wo: tape.leaf(l.wo.clone()),
                mlp_norm_gain: tape.leaf(l.mlp_norm_gain.clone()),
                w_gate: tape.leaf(l.w_gate.clone()),
                w_up: tape.leaf(l.w_up.clone()),
                w_down: tape.leaf(l.w_down.clone()),
            })
            .collect();
        ParamLeaves {
            embedding,
            layers,
            final_norm_gain: tape.leaf(self.final_norm_gain.clone()),
            lm_head: tape.leaf(self.lm_head.clone()),
            router: tape.leaf(self.router.clone()),
        }
    }
}

/// Node ids of all parameter tensors on one tape, mirroring the
/// [`Parameters`] structure and traversal order.
pub struct LayerLeaves {
    pub attn_norm_gain: NodeId,
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub mlp_norm_gain: NodeId,
    pub w_gate: NodeId,
    pub w_up: NodeId,
    pub w_down: NodeId,
}

pub struct ParamLeaves {
    pub embedding: NodeId,
    pub layers: Vec<LayerLeaves>,
    pub final_norm_gain: NodeId,
    pub lm_head: NodeId,
    pub router: NodeId,
}

impl ParamLeaves {
    /// Same canonical order as [`Parameters::visit`].
    pub fn visit(&self, mut f: impl FnMut(&str, NodeId)) {
        f("embedding", self.embedding);
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layers.{i}.attn_norm_gain"), l.attn_norm_gain);
            f(&format!("layers.{i}.wq"), l.wq);
            f(&format!("layers.{i}.wk"), l.wk);
            f(&format!("layers.{i}.wv"), l.wv);
            f(&format!("layers.{i}.wo"), l.wo);
            f(&format!("layers.{i}.mlp_norm_gain"), l.mlp_norm_gain);
            f(&format!("layers.{i}.w_gate"), l.w_gate);
            f(&format!("layers.{i}.w_up"), l.w_up);
            f(&format!("layers.{i}.w_down"), l.w_down);
        }
        f("final_norm.gain", self.final_norm_gain);
        f("lm_head", self.lm_head);
        f("router", self.router);
    }
}
