//! Model and pondering hyperparameters.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Which of the two equivalent attention implementations to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionImpl {
    /// Dense additive log-bias on the attention logits.
    SoftMask,
    /// Head dimension widened by one; the bias folded into the extra
    /// channel so only a boolean mask is needed.
    Augmented,
}

/// Architecture of the decoder-only backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_head: usize,
    /// Hidden width of the gated feed-forward block.
    pub d_ff: usize,
    /// Maximum interleaved sequence length (tokens × (K+1) must fit).
    pub max_position: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    /// When false (default) latent slots share the parent token's rotary
    /// position index ("pondering at the same position"); when true each
    /// interleaved slot gets its own index.
    #[serde(default)]
    pub distinct_latent_positions: bool,
    /// The router reads the step-0 state after the final normalization
    /// layer (default); false feeds it the raw layer-stack output.
    #[serde(default = "default_true")]
    pub router_post_norm: bool,
    #[serde(default = "default_attention")]
    pub attention: AttentionImpl,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
    pub seed: u64,
}

fn default_rope_base() -> f64 {
    10000.0
}

fn default_true() -> bool {
    true
}

fn default_attention() -> AttentionImpl {
    AttentionImpl::SoftMask
}

fn default_norm_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.d_model == 0
            || self.n_heads == 0
            || self.d_head == 0
            || self.d_ff == 0
            || self.max_position == 0
        {
            return Err(CoreError::Config("all dimensions must be positive".into()));
        }
        if self.d_model != self.n_heads * self.d_head {
            return Err(CoreError::Config(format!(
                "d_model {} must equal n_heads {} x d_head {}",
                self.d_model, self.n_heads, self.d_head
            )));
        }
        if self.d_head % 2 != 0 {
            return Err(CoreError::Config(format!(
                "d_head {} must be even for rotary position pairs",
                self.d_head
            )));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 1.0) {
            return Err(CoreError::Config("rope_base must be finite and > 1".into()));
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return Err(CoreError::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }

    /// Vocabulary floor when paired with the byte-level tokenizer
    /// (256 byte values + BOS/EOS/PAD).
    pub fn validate_for_byte_tokenizer(&self) -> Result<()> {
        self.validate()?;
        if self.vocab_size < crate::tokenizer::MIN_VOCAB {
            return Err(CoreError::Config(format!(
                "vocab_size {} below byte-tokenizer minimum {}",
                self.vocab_size,
                crate::tokenizer::MIN_VOCAB
            )));
        }
        Ok(())
    }
}

/// Adaptive pondering versus the uniform-depth emulation baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PonderMode {
    /// Router-predicted step distribution; soft masking and hard stopping.
    Adaptive,
    /// Step distribution pinned to one-hot at K: every token runs all K
    /// steps with mask scores identically 1 (uniform-depth baseline).
    FixedStep,
}

/// How latent slots are initialized at Jacobi iteration 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentInit {
    /// Copy of the parent token's embedding (default; keeps the K = 0
    /// degenerate case exact and makes iteration 1 meaningful).
    ParentEmbedding,
    /// All-zero rows, for ablation.
    Zeros,
}

/// Settings of the pondering mechanism.
///
/// `max_steps` (K) may be 0: that degenerates to a plain language model
/// with no latent slots, which the depth-scaling comparisons rely on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PonderSettings {
    /// K: maximum additional pondering steps per token.
    pub max_steps: usize,
    /// Hard-stopping threshold on mask scores.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Weight of the minimum-ponder penalty.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Parallel-training iteration count.
    #[serde(default = "default_jacobi_iters")]
    pub jacobi_iters: usize,
    #[serde(default = "default_mode")]
    pub mode: PonderMode,
    #[serde(default = "default_latent_init")]
    pub latent_init: LatentInit,
}

fn default_tau() -> f64 {
    1e-4
}

fn default_lambda() -> f64 {
    0.01
}

fn default_jacobi_iters() -> usize {
    3
}

fn default_mode() -> PonderMode {
    PonderMode::Adaptive
}

fn default_latent_init() -> LatentInit {
    LatentInit::ParentEmbedding
}

impl PonderSettings {
    /// Defaults at a given step budget K.
    pub fn with_max_steps(max_steps: usize) -> Self {
        Self {
            max_steps,
            tau: default_tau(),
            lambda: default_lambda(),
            jacobi_iters: default_jacobi_iters(),
            mode: default_mode(),
            latent_init: default_latent_init(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(CoreError::Config(format!(
                "tau {} must lie in (0, 1)",
                self.tau
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CoreError::Config(format!(
                "lambda {} must be finite and nonnegative",
                self.lambda
            )));
        }
        if !(1..=16).contains(&self.jacobi_iters) {
            return Err(CoreError::Config(format!(
                "jacobi_iters {} must lie in 1..=16",
                self.jacobi_iters
            )));
        }
        Ok(())
    }

    /// Slots per token in the interleaved layout: the observed position
    /// plus K latent slots.
    pub fn slots_per_token(&self) -> usize {
        self.max_steps + 1
    }
}
