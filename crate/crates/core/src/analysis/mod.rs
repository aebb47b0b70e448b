//! Diagnostics over a trained checkpoint: where the router spends compute,
//! what each extra step buys, how the inference-time bias shifts the
//! compute/quality trade-off, how fast parallel refinement converges, and
//! which token types get pruned.

pub mod convergence;
pub mod counterfactual;
pub mod difficulty;
pub mod svg;
pub mod tokenstats;

pub use convergence::{fit_geometric, jacobi_convergence, ConvergenceFit, FixedPointRef};
pub use counterfactual::{counterfactual_csv_header, counterfactual_sweep, CounterfactualPoint};
pub use difficulty::{
    bucket_label, difficulty_buckets, difficulty_csv_header, intrinsic_difficulty,
    marginal_csv_header, marginal_utility, spearman, MarginalUtilityReport,
    TokenDifficultyRecord,
};
pub use svg::{LinePlot, Series};
pub use tokenstats::{
    consumed_pairs, token_stats_csv_header, token_step_stats, TokenStepStats,
};
