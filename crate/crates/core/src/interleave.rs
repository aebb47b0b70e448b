//! Interleaved training layout: each observed token is followed by K
//! latent slots, `[e(x₁), z₁,₁, …, z₁,K, e(x₂), z₂,₁, …]`, so all ponder
//! steps of a window can be refined in parallel under one causal mask.

use ndarray::Array2;

use crate::config::{LatentInit, ModelConfig, PonderSettings};
use crate::error::{CoreError, Result};
use crate::params::Parameters;
use crate::real::Real;

/// What a row of the interleaved sequence holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    /// The embedding of an observed token (ponder step 0).
    Observed,
    /// Latent slot `step` (1..=K) elaborating its parent token.
    Latent { step: usize },
}

/// Static metadata of one interleaved row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotInfo {
    pub kind: SlotKind,
    /// Index of the parent token within the window (0-based).
    pub parent: usize,
    /// Rotary wall position fed to the backbone.
    pub position: usize,
}

/// Row bookkeeping for a window of `n_tokens` tokens with K latent slots
/// each. Row `t·(K+1) + k` is ponder step `k` of token `t`.
#[derive(Clone, Debug)]
pub struct InterleavedLayout {
    n_tokens: usize,
    max_steps: usize,
    slots: Vec<SlotInfo>,
}

impl InterleavedLayout {
    pub fn new(n_tokens: usize, max_steps: usize, distinct_latent_positions: bool) -> Self {
        let mut slots = Vec::with_capacity(n_tokens * (max_steps + 1));
        for t in 0..n_tokens {
            for k in 0..=max_steps {
                let kind = if k == 0 { SlotKind::Observed } else { SlotKind::Latent { step: k } };
                let position = if distinct_latent_positions { slots.len() } else { t };
                slots.push(SlotInfo { kind, parent: t, position });
            }
        }
        Self { n_tokens, max_steps, slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// Row index of ponder step `k` of token `t`.
    pub fn row(&self, t: usize, k: usize) -> usize {
        debug_assert!(t < self.n_tokens && k <= self.max_steps);
        t * (self.max_steps + 1) + k
    }

    pub fn info(&self, row: usize) -> &SlotInfo {
        &self.slots[row]
    }

    pub fn slots(&self) -> &[SlotInfo] {
        &self.slots
    }

    /// Rotary wall position of every row.
    pub fn positions(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.position).collect()
    }

    /// Rows holding observed tokens (ponder step 0), in token order.
    pub fn observed_rows(&self) -> Vec<usize> {
        (0..self.n_tokens).map(|t| self.row(t, 0)).collect()
    }

    /// Rows holding latent slot `k` (1..=K) of every token, in token order.
    pub fn latent_rows(&self, k: usize) -> Vec<usize> {
        assert!(k >= 1 && k <= self.max_steps, "latent slot index {k}");
        (0..self.n_tokens).map(|t| self.row(t, k)).collect()
    }

    /// Embedding-table row per interleaved row under parent-embedding
    /// initialization: every slot starts from its parent token's embedding.
    pub fn initial_ids(&self, tokens: &[u32]) -> Vec<usize> {
        assert_eq!(tokens.len(), self.n_tokens);
        self.slots.iter().map(|s| tokens[s.parent] as usize).collect()
    }

    /// Row selection implementing the between-iteration rewiring over the
    /// vertical stack `[initial inputs; last outputs]` (each `len` rows):
    /// observed rows keep their initial embedding, latent row `r` takes the
    /// previous row's output — slot k's input is slot k−1's refined state.
    pub fn update_index(&self) -> Vec<usize> {
        let n = self.len();
        self.slots
            .iter()
            .enumerate()
            .map(|(r, s)| match s.kind {
                SlotKind::Observed => r,
                SlotKind::Latent { .. } => n + r - 1,
            })
            .collect()
    }
}

/// A window's interleaved initial states plus metadata.
#[derive(Debug)]
pub struct InterleavedSequence<F: Real> {
    pub layout: InterleavedLayout,
    /// `(n_tokens·(K+1), d_model)` initial states S⁽⁰⁾.
    pub states: Array2<F>,
    /// The window's token ids, for supervision.
    pub tokens: Vec<u32>,
}

/// Lays out a token window with K latent slots per token and initializes
/// latent states per `ponder.latent_init`.
pub fn build_interleaved<F: Real>(
    tokens: &[u32],
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
) -> Result<InterleavedSequence<F>> {
    if tokens.is_empty() {
        return Err(CoreError::Data("cannot interleave an empty window".into()));
    }
    for &id in tokens {
        if (id as usize) >= config.vocab_size {
            return Err(CoreError::Data(format!(
                "token id {id} outside vocabulary of size {}",
                config.vocab_size
            )));
        }
    }
    let layout = InterleavedLayout::new(
        tokens.len(),
        ponder.max_steps,
        config.distinct_latent_positions,
    );
    let highest = layout
        .positions()
        .into_iter()
        .max()
        .expect("nonempty layout");
    if highest >= config.max_position {
        return Err(CoreError::Data(format!(
            "window needs position {highest} but the model supports only {}",
            config.max_position
        )));
    }

    let d = config.d_model;
    let mut states = Array2::zeros((layout.len(), d));
    for (r, slot) in layout.slots().iter().enumerate() {
        let fill = match (slot.kind, ponder.latent_init) {
            (SlotKind::Observed, _) | (_, LatentInit::ParentEmbedding) => {
                Some(tokens[slot.parent] as usize)
            }
            (SlotKind::Latent { .. }, LatentInit::Zeros) => None,
        };
        if let Some(id) = fill {
            states.row_mut(r).assign(&params.embedding.row(id));
        }
    }
    Ok(InterleavedSequence { layout, states, tokens: tokens.to_vec() })
}
