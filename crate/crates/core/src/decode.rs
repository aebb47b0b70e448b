//! Sequential autoregressive decoding with token-wise hard stopping.
//!
//! Each consumed token runs the backbone once for its observed slot, asks
//! the router how many extra steps the position deserves, runs exactly
//! that many latent slots (each feeding on the previous slot's post-norm
//! output), and integrates the states into one predictive vector. Latent
//! slots beyond the stopping index are never materialized, and every
//! retained slot keeps its creation-time mask score as a persistent
//! attention bias for all future queries.

use ndarray::{Array1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{cache_extend, final_norm, lm_logits, BackboneCache};
use crate::config::{ModelConfig, PonderMode, PonderSettings};
use crate::error::{CoreError, Result};
use crate::params::Parameters;
use crate::ponder::{
    hard_stop_index, router_logits, step_distribution, tail_cdf, weighted_integration,
    LatentStates, StepDistribution,
};
use crate::real::{fr, Real};
use crate::tokenizer::{TOKEN_BOS, TOKEN_EOS};

/// How to turn next-token logits into a token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SamplingSpec {
    /// Argmax, ties broken toward the lowest token id. Deterministic.
    Greedy,
    /// Softmax at the given temperature, driven by a seeded generator.
    Temperature { temperature: f64, seed: u64 },
}

/// Instantiated sampling state.
pub struct Sampler {
    kind: SamplerKind,
}

enum SamplerKind {
    Greedy,
    Temperature { temperature: f64, rng: ChaCha20Rng },
}

impl Sampler {
    pub fn new(spec: &SamplingSpec) -> Result<Self> {
        let kind = match spec {
            SamplingSpec::Greedy => SamplerKind::Greedy,
            SamplingSpec::Temperature { temperature, seed } => {
                if !(temperature.is_finite() && *temperature > 0.0) {
                    return Err(CoreError::Config(format!(
                        "sampling temperature {temperature} must be positive"
                    )));
                }
                SamplerKind::Temperature {
                    temperature: *temperature,
                    rng: ChaCha20Rng::seed_from_u64(*seed),
                }
            }
        };
        Ok(Self { kind })
    }

    pub fn pick<F: Real>(&mut self, logits: &Array1<F>) -> u32 {
        match &mut self.kind {
            SamplerKind::Greedy => greedy_token(logits),
            SamplerKind::Temperature { temperature, rng } => {
                let scaled: Vec<f64> =
                    logits.iter().map(|l| l.as_f64() / *temperature).collect();
                let mx = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = scaled.iter().map(|l| (l - mx).exp()).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                for (i, w) in weights.iter().enumerate() {
                    u -= w;
                    if u <= 0.0 {
                        return i as u32;
                    }
                }
                (weights.len() - 1) as u32
            }
        }
    }
}

fn greedy_token<F: Real>(logits: &Array1<F>) -> u32 {
    let mut best = 0usize;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Everything observed while consuming one token: the stopping decision,
/// the router's distribution and mask scores, and the next-token logits
/// from the integrated state.
#[derive(Debug, Clone)]
pub struct Advance<F: Real> {
    /// Wall position of the consumed token.
    pub pos: usize,
    /// Executed additional steps, `hard_stop_index(w, τ)`.
    pub khat: usize,
    /// Step distribution `s_0..s_K`.
    pub s: Vec<f64>,
    /// Mask scores `w_0..w_K` (`w_0` = 1).
    pub w: Vec<f64>,
    /// Next-token logits from the integrated state.
    pub logits: Array1<F>,
}

/// Negative log-likelihood of `token` under a logits vector, accumulated
/// in f64 regardless of working precision.
pub fn token_nll<F: Real>(logits: &Array1<F>, token: u32) -> Result<f64> {
    let idx = token as usize;
    if idx >= logits.len() {
        return Err(CoreError::Data(format!(
            "token {token} outside the {}-entry vocabulary",
            logits.len()
        )));
    }
    let vals: Vec<f64> = logits.iter().map(|l| l.as_f64()).collect();
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + vals.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    Ok(lse - vals[idx])
}

impl<F: Real> Advance<F> {
    /// Negative log-likelihood the position assigns to `token`.
    pub fn nll(&self, token: u32) -> Result<f64> {
        token_nll(&self.logits, token)
    }

    pub fn greedy(&self) -> u32 {
        greedy_token(&self.logits)
    }

    /// Full per-token record against the emitted or observed token.
    pub fn record(&self, token: u32) -> Result<DecodeRecord> {
        Ok(DecodeRecord {
            pos: self.pos,
            token_id: token,
            khat: self.khat,
            nll: self.nll(token)?,
            s: self.s.clone(),
            w: self.w.clone(),
        })
    }
}

/// [`DecodeSession::advance_probed`] output: the normal advance plus the
/// internals that per-depth analyses need.
#[derive(Debug, Clone)]
pub struct ProbedAdvance<F: Real> {
    /// The regular advance (its `khat` is the number of executed steps,
    /// which is `K` under forced full depth).
    pub advance: Advance<F>,
    /// What the stopping rule chose, regardless of forcing.
    pub rule_khat: usize,
    /// The step distribution in working precision (the advance carries it
    /// only as `f64`).
    pub dist: StepDistribution<F>,
    /// Post-norm states `h_0..h_executed`.
    pub states: Vec<Array1<F>>,
}

/// Per-token decode log entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeRecord {
    pub pos: usize,
    pub token_id: u32,
    pub khat: usize,
    pub nll: f64,
    pub s: Vec<f64>,
    pub w: Vec<f64>,
}

/// CSV header matching [`DecodeRecord::csv_row`]:
/// `pos,token_id,khat,nll,s_0..s_K,w_0..w_K`.
pub fn record_csv_header(max_steps: usize) -> String {
    let mut h = String::from("pos,token_id,khat,nll");
    for k in 0..=max_steps {
        h.push_str(&format!(",s_{k}"));
    }
    for k in 0..=max_steps {
        h.push_str(&format!(",w_{k}"));
    }
    h
}

impl DecodeRecord {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{},{},{:.6}", self.pos, self.token_id, self.khat, self.nll);
        for v in &self.s {
            row.push_str(&format!(",{v:.6}"));
        }
        for v in &self.w {
            row.push_str(&format!(",{v:.6}"));
        }
        row
    }
}

/// One decoding stream: owns the interleaved key/value cache for a single
/// sequence over shared read-only parameters.
pub struct DecodeSession<'a, F: Real> {
    params: &'a Parameters<F>,
    config: &'a ModelConfig,
    ponder: &'a PonderSettings,
    cache: BackboneCache<F>,
    n_tokens: usize,
    alpha: f64,
    force_full_depth: bool,
}

impl<'a, F: Real> DecodeSession<'a, F> {
    pub fn new(
        params: &'a Parameters<F>,
        config: &'a ModelConfig,
        ponder: &'a PonderSettings,
    ) -> Result<Self> {
        config.validate()?;
        ponder.validate()?;
        if params.max_steps() != ponder.max_steps {
            return Err(CoreError::Config(format!(
                "router is sized for {} steps but settings ask for {}",
                params.max_steps(),
                ponder.max_steps
            )));
        }
        Ok(Self {
            params,
            config,
            ponder,
            cache: BackboneCache::new(config),
            n_tokens: 0,
            alpha: 0.0,
            force_full_depth: false,
        })
    }

    /// Adds the inference-time router logit bias `α·k` (0 = normal).
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Ignores the stopping rule: every token runs all K latent slots and
    /// integrates untruncated, while keeping the router's soft mask. Used
    /// to measure how much the hard stop changes the model's predictions.
    pub fn with_full_depth(mut self) -> Self {
        self.force_full_depth = true;
        self
    }

    pub fn tokens_consumed(&self) -> usize {
        self.n_tokens
    }

    /// Retained interleaved cache rows (observed + kept latent slots).
    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    fn slot_position(&self, t: usize, k: usize) -> usize {
        if self.config.distinct_latent_positions {
            t * (self.ponder.max_steps + 1) + k
        } else {
            t
        }
    }

    /// Consumes one token: observed forward, routing, `K̂` latent slots,
    /// integration. Returns the stopping decision and next-token logits.
    pub fn advance(&mut self, token: u32) -> Result<Advance<F>> {
        self.advance_probed(token).map(|p| p.advance)
    }

    /// Like [`DecodeSession::advance`] but also returns the post-norm state
    /// of every executed slot and the stopping rule's own choice, for
    /// analyses that probe per-depth behavior.
    pub fn advance_probed(&mut self, token: u32) -> Result<ProbedAdvance<F>> {
        if (token as usize) >= self.config.vocab_size {
            return Err(CoreError::Data(format!(
                "token {token} outside the vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let t = self.n_tokens;
        let k_max = self.ponder.max_steps;
        if self.slot_position(t, k_max) >= self.config.max_position {
            return Err(CoreError::Data(format!(
                "token {t} would exceed the position capacity of {}",
                self.config.max_position
            )));
        }

        let slot_positions: Vec<usize> =
            (0..=k_max).map(|k| self.slot_position(t, k)).collect();

        // Observed slot: bias 1 (log 1 = 0).
        let x0 = self
            .params
            .embedding
            .row(token as usize)
            .to_owned()
            .insert_axis(Axis(0));
        let raw0 = cache_extend(
            self.params,
            self.config,
            &mut self.cache,
            &x0,
            &[slot_positions[0]],
            &[F::one()],
        )?;
        let h0 = final_norm(self.params, self.config, &raw0);

        // Routing.
        let (dist, scores_f, rule_khat): (StepDistribution<F>, Vec<F>, usize) =
            match self.ponder.mode {
                PonderMode::FixedStep => (
                    StepDistribution::one_hot_at(k_max),
                    vec![F::one(); k_max + 1],
                    k_max,
                ),
                PonderMode::Adaptive => {
                    let router_in = if self.config.router_post_norm {
                        h0.row(0)
                    } else {
                        raw0.row(0)
                    };
                    let logits = router_logits(router_in, self.params);
                    let dist = step_distribution(&logits, fr::<F>(self.alpha));
                    let scores = tail_cdf(&dist);
                    let rule_khat = hard_stop_index(&scores, self.ponder.tau);
                    let mut scores_f = scores.values().to_vec();
                    scores_f[0] = F::one();
                    (dist, scores_f, rule_khat)
                }
            };
        let khat = if self.force_full_depth { k_max } else { rule_khat };

        // Latent slots 1..=K̂, each feeding on the previous post-norm state
        // and persisting its creation-time mask score.
        let mut states = vec![h0.row(0).to_owned()];
        let mut prev = h0;
        for k in 1..=khat {
            let raw_k = cache_extend(
                self.params,
                self.config,
                &mut self.cache,
                &prev,
                &[slot_positions[k]],
                &[scores_f[k]],
            )?;
            let hk = final_norm(self.params, self.config, &raw_k);
            states.push(hk.row(0).to_owned());
            prev = hk;
        }

        // Integration truncated at K̂ (skipped tail mass is not renormalized).
        let latent = LatentStates::new(states.clone())?;
        let integrated = weighted_integration(&dist, &latent, Some(khat))?;
        let logits = lm_logits(self.params, &integrated.insert_axis(Axis(0)))
            .row(0)
            .to_owned();

        self.n_tokens += 1;
        Ok(ProbedAdvance {
            advance: Advance {
                pos: t,
                khat,
                s: dist.probs().iter().map(|v| v.as_f64()).collect(),
                w: scores_f.iter().map(|v| v.as_f64()).collect(),
                logits,
            },
            rule_khat,
            dist,
            states,
        })
    }
}

/// Autoregressive generation: primes the session with `[BOS] ++ prompt`,
/// then emits up to `max_new_tokens` tokens (stopping early at EOS).
/// Returns the emitted ids and one record per emitted token.
pub fn generate<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    prompt: &[u32],
    max_new_tokens: usize,
    spec: &SamplingSpec,
) -> Result<(Vec<u32>, Vec<DecodeRecord>)> {
    let mut session = DecodeSession::new(params, config, ponder)?;
    let mut sampler = Sampler::new(spec)?;
    let mut last = session.advance(TOKEN_BOS)?;
    for &tok in prompt {
        last = session.advance(tok)?;
    }
    let mut emitted = Vec::new();
    let mut records = Vec::new();
    for _ in 0..max_new_tokens {
        let token = sampler.pick(&last.logits);
        records.push(last.record(token)?);
        emitted.push(token);
        if token == TOKEN_EOS {
            break;
        }
        last = session.advance(token)?;
    }
    Ok((emitted, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::backbone_forward;
    use crate::config::tests_support::tiny_setup;
    use ndarray::Array2;

    fn perturbed_params(config: &ModelConfig, ponder: &PonderSettings) -> Parameters<f64> {
        let mut params = Parameters::<f64>::init(config, ponder).unwrap();
        for (i, v) in params.router.iter_mut().enumerate() {
            *v = 0.35 * (((i * 37 + 11) % 23) as f64 / 11.0 - 1.0);
        }
        params
    }

    /// Cache-free reference: re-forwards the whole retained prefix for
    /// every new slot, reproducing the session's decisions independently.
    struct Reference<'a> {
        params: &'a Parameters<f64>,
        config: &'a ModelConfig,
        ponder: &'a PonderSettings,
        inputs: Vec<Array1<f64>>,
        positions: Vec<usize>,
        scores: Vec<f64>,
        n_tokens: usize,
    }

    impl<'a> Reference<'a> {
        fn forward_last(&self) -> Array1<f64> {
            let d = self.config.d_model;
            let mut x = Array2::zeros((self.inputs.len(), d));
            for (i, row) in self.inputs.iter().enumerate() {
                x.row_mut(i).assign(row);
            }
            let scores = Array1::from_vec(self.scores.clone());
            let h = backbone_forward(
                self.params,
                self.config,
                &x,
                &self.positions,
                Some(&scores),
            )
            .unwrap();
            let post = final_norm(self.params, self.config, &h);
            post.row(post.dim().0 - 1).to_owned()
        }

        fn advance(&mut self, token: u32) -> (usize, Array1<f64>) {
            let t = self.n_tokens;
            let kp1 = self.ponder.max_steps + 1;
            let pos = |k: usize| {
                if self.config.distinct_latent_positions {
                    t * kp1 + k
                } else {
                    t
                }
            };
            self.inputs.push(self.params.embedding.row(token as usize).to_owned());
            self.positions.push(pos(0));
            self.scores.push(1.0);
            let h0 = self.forward_last();

            let logits = router_logits(h0.view(), self.params);
            let dist = step_distribution(&logits, 0.0);
            let w = tail_cdf(&dist);
            let khat = hard_stop_index(&w, self.ponder.tau);

            let mut states = vec![h0];
            for k in 1..=khat {
                self.inputs.push(states[k - 1].clone());
                self.positions.push(pos(k));
                self.scores.push(w.values()[k]);
                states.push(self.forward_last());
            }
            let latent = LatentStates::new(states).unwrap();
            let integrated = weighted_integration(&dist, &latent, Some(khat)).unwrap();
            let logits =
                lm_logits(self.params, &integrated.insert_axis(Axis(0))).row(0).to_owned();
            self.n_tokens += 1;
            (khat, logits)
        }
    }

    #[test]
    fn cached_decoding_matches_full_reforward() {
        let (config, ponder) = tiny_setup(2);
        let params = perturbed_params(&config, &ponder);
        let mut session = DecodeSession::new(&params, &config, &ponder).unwrap();
        let mut reference = Reference {
            params: &params,
            config: &config,
            ponder: &ponder,
            inputs: Vec::new(),
            positions: Vec::new(),
            scores: Vec::new(),
            n_tokens: 0,
        };
        let tokens = [TOKEN_BOS, 104, 43, 61, 200, 9];
        let mut khats = Vec::new();
        for &tok in &tokens {
            let adv = session.advance(tok).unwrap();
            let (ref_khat, ref_logits) = reference.advance(tok);
            assert_eq!(adv.khat, ref_khat);
            let worst = adv
                .logits
                .iter()
                .zip(ref_logits.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-10, "logits diverge by {worst} at pos {}", adv.pos);
            khats.push(adv.khat);
        }
        assert_eq!(session.cache_len(), reference.inputs.len());
        assert!(
            khats.iter().any(|&k| k > 0),
            "fixture should execute some latent steps, got {khats:?}"
        );
    }

    #[test]
    fn below_threshold_scores_skip_all_latent_passes() {
        let (config, ponder) = tiny_setup(3);
        let params = Parameters::<f64>::init(&config, &ponder).unwrap();
        // A strong negative tilt drives s_0 → 1, so w_1 < τ at every token.
        let mut session =
            DecodeSession::new(&params, &config, &ponder).unwrap().with_alpha(-30.0);
        for (i, tok) in [TOKEN_BOS, 5u32, 9].into_iter().enumerate() {
            let adv = session.advance(tok).unwrap();
            assert_eq!(adv.khat, 0);
            assert!(adv.w[1] < ponder.tau);
            assert_eq!(session.cache_len(), i + 1, "one cache row per token");
        }
    }

    #[test]
    fn fixed_step_mode_always_runs_the_full_budget() {
        let (config, mut ponder) = tiny_setup(2);
        ponder.mode = PonderMode::FixedStep;
        let params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let mut session = DecodeSession::new(&params, &config, &ponder).unwrap();
        for (i, tok) in [TOKEN_BOS, 5u32, 9].into_iter().enumerate() {
            let adv = session.advance(tok).unwrap();
            assert_eq!(adv.khat, 2);
            assert_eq!(adv.s, vec![0.0, 0.0, 1.0]);
            assert_eq!(adv.w, vec![1.0, 1.0, 1.0]);
            assert_eq!(session.cache_len(), 3 * (i + 1));
        }
    }

    #[test]
    fn greedy_generation_is_deterministic() {
        let (config, ponder) = tiny_setup(2);
        let params = perturbed_params(&config, &ponder);
        let prompt = [104u32, 105];
        let (a_tokens, a_records) =
            generate(&params, &config, &ponder, &prompt, 8, &SamplingSpec::Greedy).unwrap();
        let (b_tokens, b_records) =
            generate(&params, &config, &ponder, &prompt, 8, &SamplingSpec::Greedy).unwrap();
        assert_eq!(a_tokens, b_tokens);
        assert_eq!(a_records, b_records);
        assert_eq!(a_records.len(), a_tokens.len());
        assert!(a_records.iter().all(|r| r.khat <= ponder.max_steps));
        // Records carry the emitted token and its position after the prompt.
        assert_eq!(a_records[0].pos, prompt.len());
        assert_eq!(a_records[0].token_id, a_tokens[0]);
    }

    #[test]
    fn empty_budget_emits_nothing() {
        let (config, ponder) = tiny_setup(1);
        let params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let (tokens, records) =
            generate(&params, &config, &ponder, &[10, 20], 0, &SamplingSpec::Greedy).unwrap();
        assert!(tokens.is_empty());
        assert!(records.is_empty());
    }

    #[test]
    fn temperature_sampling_is_seeded() {
        let (config, ponder) = tiny_setup(1);
        let params = perturbed_params(&config, &ponder);
        let spec = SamplingSpec::Temperature { temperature: 1.0, seed: 99 };
        let (a, _) = generate(&params, &config, &ponder, &[50], 6, &spec).unwrap();
        let (b, _) = generate(&params, &config, &ponder, &[50], 6, &spec).unwrap();
        assert_eq!(a, b);
        assert!(Sampler::new(&SamplingSpec::Temperature { temperature: 0.0, seed: 1 }).is_err());
        assert!(Sampler::new(&SamplingSpec::Temperature { temperature: -1.0, seed: 1 }).is_err());
    }

    #[test]
    fn context_overflow_is_a_capacity_error() {
        let (mut config, ponder) = tiny_setup(1);
        config.max_position = 3;
        let params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let mut session = DecodeSession::new(&params, &config, &ponder).unwrap();
        for tok in [TOKEN_BOS, 1u32, 2] {
            session.advance(tok).unwrap();
        }
        let err = session.advance(3).unwrap_err();
        assert_eq!(err.category(), "data");
        assert!(err.to_string().contains("position capacity"), "{err}");
    }

    #[test]
    fn alpha_tilts_the_executed_depth() {
        let (config, ponder) = tiny_setup(3);
        let params = Parameters::<f64>::init(&config, &ponder).unwrap();
        // Zero router: uniform s. Strong negative α concentrates mass at
        // step 0; strong positive α keeps the tail heavy.
        let mut low = DecodeSession::new(&params, &config, &ponder).unwrap().with_alpha(-25.0);
        let mut high = DecodeSession::new(&params, &config, &ponder).unwrap().with_alpha(25.0);
        let a = low.advance(TOKEN_BOS).unwrap();
        let b = high.advance(TOKEN_BOS).unwrap();
        assert_eq!(a.khat, 0);
        assert_eq!(b.khat, 3);
        assert!(a.s[0] > 0.999);
        assert!(b.s[3] > 0.999);
    }

    #[test]
    fn record_csv_schema_is_stable() {
        assert_eq!(record_csv_header(1), "pos,token_id,khat,nll,s_0,s_1,w_0,w_1");
        let rec = DecodeRecord {
            pos: 3,
            token_id: 42,
            khat: 1,
            nll: 2.5,
            s: vec![0.25, 0.75],
            w: vec![1.0, 0.75],
        };
        assert_eq!(rec.csv_row(), "3,42,1,2.500000,0.250000,0.750000,1.000000,0.750000");
    }

    #[test]
    fn mismatched_router_budget_is_rejected() {
        let (config, ponder) = tiny_setup(2);
        let params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let (_, ponder3) = tiny_setup(3);
        let Err(err) = DecodeSession::new(&params, &config, &ponder3) else {
            panic!("budget mismatch must be rejected");
        };
        assert_eq!(err.category(), "config");
    }
}
