//! Small decoder-only language model with token-wise adaptive pondering.
//!
//! The model spends a variable number of latent "pondering" steps per input
//! token. A lightweight router predicts, for every token, a distribution over
//! step counts; the tail CDF of that distribution becomes a soft attention
//! mask over the token's latent slots during training and a hard stopping
//! rule during inference. Training runs all slots in parallel with a few
//! Jacobi fixed-point iterations; inference unrolls the same recurrence
//! sequentially with a KV cache and prunes slots whose mask score falls
//! below a threshold.
//!
//! Layout:
//! - [`tape`]: reverse-mode autodiff over dense 2-D arrays (the only engine
//!   used by training; inference runs value-only code paths).
//! - [`config`], [`params`]: model hyperparameters and weight containers.
//! - [`attention`], [`backbone`]: masked attention (soft-mask and
//!   augmented-QKV forms) and the transformer stack.
//! - [`ponder`]: step distributions, mask scores, hard stopping, weighted
//!   integration of latent states.
//! - [`tokenizer`], [`data`]: byte-level tokens and corpus handling.
//! - [`interleave`], [`jacobi`], [`loss`], [`optimizer`], [`trainer`],
//!   [`checkpoint`]: the training pipeline.
//! - [`decode`], [`eval`], [`flops`]: inference, perplexity, cost accounting.
//! - [`analysis`]: difficulty buckets, marginal utility, counterfactual
//!   routing, Jacobi convergence, per-token statistics.
//! - [`gradcheck`]: finite-difference gradient verification.

pub mod analysis;
pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gradcheck;
pub mod interleave;
pub mod jacobi;
pub mod loss;
pub mod optimizer;
pub mod params;
pub mod ponder;
pub mod real;
pub mod tape;
pub mod tokenizer;
pub mod trainer;

pub use config::{AttentionImpl, LatentInit, ModelConfig, PonderMode, PonderSettings};
pub use error::{CoreError, Result};
pub use params::Parameters;
pub use real::Real;
