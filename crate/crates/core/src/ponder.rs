//! Step distributions, mask scores, hard stopping, and weighted
//! hidden-state integration — the pondering math shared by training
//! and inference.

use crate::error::{CoreError, Result};
use crate::params::Parameters;
use crate::real::{fr, Real};
use ndarray::{Array1, ArrayView1};

/// Probability vector over the number of additional pondering steps a
/// token uses; index k = probability of exactly k steps, k = 0..K.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution<F: Real>(Array1<F>);

impl<F: Real> StepDistribution<F> {
    /// Wraps a probability vector, checking nonnegativity and that the
    /// entries sum to 1 within 1e-6.
    pub fn new(s: Array1<F>) -> Result<Self> {
        if s.is_empty() {
            return Err(CoreError::Shape("step distribution is empty".into()));
        }
        if s.iter().any(|&p| p < F::zero() || !p.is_finite()) {
            return Err(CoreError::Numeric(
                "step distribution has negative or non-finite entries".into(),
            ));
        }
        let sum: F = s.iter().copied().fold(F::zero(), |a, b| a + b);
        if (sum.as_f64() - 1.0).abs() > 1e-6 {
            return Err(CoreError::Numeric(format!(
                "step distribution sums to {} (expected 1)",
                sum
            )));
        }
        Ok(StepDistribution(s))
    }

    /// One-hot at K (the uniform-depth emulation used by fixed-step mode).
    pub fn one_hot_at(k_max: usize) -> Self {
        let mut s = Array1::zeros(k_max + 1);
        s[k_max] = F::one();
        StepDistribution(s)
    }

    pub fn probs(&self) -> &Array1<F> {
        &self.0
    }

    pub fn k_max(&self) -> usize {
        self.0.len() - 1
    }

    /// Expected number of additional steps Σ k·s_k.
    pub fn mean_steps(&self) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(k, &p)| k as f64 * p.as_f64())
            .sum()
    }
}

/// Tail CDF of a step distribution: w_k = Σ_{j ≥ k} s_j, the probability
/// mass of continuing to step k or beyond. Nonincreasing with w_0 = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskScores<F: Real>(Array1<F>);

impl<F: Real> MaskScores<F> {
    pub fn values(&self) -> &Array1<F> {
        &self.0
    }

    pub fn k_max(&self) -> usize {
        self.0.len() - 1
    }
}

/// Router logits for one token: a single linear map of the step-0 hidden
/// state, length K+1.
pub fn router_logits<F: Real>(h0: ArrayView1<F>, params: &Parameters<F>) -> Array1<F> {
    params.router.dot(&h0)
}

/// Softmax of (logits + α·k): the inference-time router bias adds α times
/// the step index to entry k, so positive α tilts mass toward more steps
/// and negative α toward fewer. α = 0 in normal operation.
pub fn step_distribution<F: Real>(logits: &Array1<F>, alpha: F) -> StepDistribution<F> {
    let biased = Array1::from_shape_fn(logits.len(), |k| logits[k] + alpha * fr::<F>(k as f64));
    let max = biased.iter().copied().fold(F::neg_infinity(), F::max);
    let exps = biased.mapv(|x| (x - max).exp());
    let sum: F = exps.iter().copied().fold(F::zero(), |a, b| a + b);
    StepDistribution(exps / sum)
}

/// Reverse cumulative sum of the step distribution.
pub fn tail_cdf<F: Real>(s: &StepDistribution<F>) -> MaskScores<F> {
    let probs = s.probs();
    let mut w = Array1::zeros(probs.len());
    let mut acc = F::zero();
    for k in (0..probs.len()).rev() {
        acc = acc + probs[k];
        w[k] = acc;
    }
    MaskScores(w)
}

/// The largest step index whose mask score still meets the threshold:
/// K̂ = max{k : w_k ≥ τ}. Always defined because w_0 = 1 ≥ τ.
pub fn hard_stop_index<F: Real>(w: &MaskScores<F>, tau: f64) -> usize {
    let tau = fr::<F>(tau);
    let mut khat = 0;
    for (k, &wk) in w.values().iter().enumerate() {
        if wk >= tau {
            khat = k;
        }
    }
    khat
}

/// Hidden states of one token position: h_0 at the observed-token slot and
/// h_k (k ≥ 1) at latent slot k. At inference only h_0..h_K̂ exist.
#[derive(Clone, Debug)]
pub struct LatentStates<F: Real> {
    states: Vec<Array1<F>>,
}

impl<F: Real> LatentStates<F> {
    pub fn new(states: Vec<Array1<F>>) -> Result<Self> {
        if states.is_empty() {
            return Err(CoreError::Shape("no latent states".into()));
        }
        let d = states[0].len();
        for (k, h) in states.iter().enumerate() {
            if h.len() != d {
                return Err(CoreError::Shape(format!(
                    "state {k} has dim {} (expected {d})",
                    h.len()
                )));
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Numeric(format!("state {k} is non-finite")));
            }
        }
        Ok(LatentStates { states })
    }

    pub fn available(&self) -> usize {
        self.states.len() - 1
    }

    pub fn get(&self, k: usize) -> &Array1<F> {
        &self.states[k]
    }
}

/// ĥ = Σ_{k=0}^{i} s_k·h_k with i = `truncation` (or K when None). The
/// omitted tail mass is *not* renormalized: the skipped-mass bound is the
/// train/inference consistency argument, and renormalizing would break it.
pub fn weighted_integration<F: Real>(
    s: &StepDistribution<F>,
    states: &LatentStates<F>,
    truncation: Option<usize>,
) -> Result<Array1<F>> {
    let i = truncation.unwrap_or(s.k_max());
    if i > s.k_max() {
        return Err(CoreError::Shape(format!(
            "truncation {i} beyond distribution length {}",
            s.k_max() + 1
        )));
    }
    if i > states.available() {
        return Err(CoreError::Shape(format!(
            "truncation {i} beyond available states {}",
            states.available()
        )));
    }
    let mut acc = Array1::zeros(states.get(0).len());
    for k in 0..=i {
        acc = acc + &(states.get(k) * s.probs()[k]);
    }
    Ok(acc)
}
