//! Training loop: per-window refinement graphs, the combined next-token +
//! minimum-ponder objective, gradient accumulation across the batch, and
//! optimizer updates, with per-step metrics suitable for CSV streaming.
//!
//! A step runs in two phases. Phase one builds one tape per window (the
//! unrolled refinement plus one cross-entropy head per ponder depth) and
//! reads off batch-level values: per-depth proxy cross-entropies `ce_i`
//! and the stacked mask scores. Phase two converts the `ce_i` into
//! penalty ratios, performs the batch-global bottom-mass selection, then
//! finishes each tape with its share of the loss and backpropagates.
//! The `ce_i` act as constants in the penalty — gradients flow only
//! through the selected mask scores and the full-depth cross-entropy.

use std::path::PathBuf;
use std::sync::Arc;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, PonderMode, PonderSettings};
use crate::data::WindowSampler;
use crate::error::{CoreError, Result};
use crate::interleave::build_interleaved;
use crate::jacobi::{jacobi_graph, JacobiGraph};
use crate::loss::{aux_loss_from_ce, ce_sum_graph, partial_integration_graph, AuxLossReport};
use crate::optimizer::{AdamW, OptimizerConfig};
use crate::params::{ParamLeaves, Parameters};
use crate::real::{fr, Real};
use crate::tape::{NodeId, Tape};

/// Run-level training knobs. Window length counts the leading BOS row, so
/// each window supervises `window_len − 1` positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub window_len: usize,
    pub total_steps: usize,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_held_out_fraction")]
    pub held_out_fraction: f64,
    /// Corpus location; carried in the config for manifests, read by callers.
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    pub optimizer: OptimizerConfig,
}

fn default_eval_interval() -> usize {
    50
}

fn default_seed() -> u64 {
    0
}

fn default_held_out_fraction() -> f64 {
    0.05
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch size must be positive".into()));
        }
        if self.window_len < 2 {
            return Err(CoreError::Config(format!(
                "window length {} leaves nothing to supervise",
                self.window_len
            )));
        }
        if self.total_steps == 0 {
            return Err(CoreError::Config("total steps must be positive".into()));
        }
        if self.eval_interval == 0 {
            return Err(CoreError::Config("eval interval must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.held_out_fraction) {
            return Err(CoreError::Config(format!(
                "held-out fraction {} must lie in [0, 1)",
                self.held_out_fraction
            )));
        }
        self.optimizer.validate()
    }
}

/// Everything one optimizer step produced, for logging and tests.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub step: usize,
    /// Batch-mean full-depth cross-entropy (== `ce[K]`).
    pub loss_ce: f64,
    /// Minimum-ponder penalty value.
    pub loss_aux: f64,
    /// Batch-mean proxy cross-entropy per ponder depth `0..=K`.
    pub ce: Vec<f64>,
    /// Batch-mean mask score per latent step `1..=K`.
    pub avg_w: Vec<f64>,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    /// Full penalty bookkeeping (ratios, increments, selections).
    pub aux: AuxLossReport,
}

/// CSV header matching [`StepMetrics::csv_row`]:
/// `step,loss_ce,loss_aux,ce_0..ce_K,avg_w_1..avg_w_K,grad_norm`.
pub fn metrics_csv_header(max_steps: usize) -> String {
    let mut h = String::from("step,loss_ce,loss_aux");
    for i in 0..=max_steps {
        h.push_str(&format!(",ce_{i}"));
    }
    for k in 1..=max_steps {
        h.push_str(&format!(",avg_w_{k}"));
    }
    h.push_str(",grad_norm");
    h
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{:.6},{:.6}", self.step, self.loss_ce, self.loss_aux);
        for c in &self.ce {
            row.push_str(&format!(",{c:.6}"));
        }
        for w in &self.avg_w {
            row.push_str(&format!(",{w:.6}"));
        }
        row.push_str(&format!(",{:.6}", self.grad_norm));
        row
    }
}

struct SeqGraph<F: Real> {
    tape: Tape<F>,
    leaves: ParamLeaves,
    graph: JacobiGraph,
    /// One summed cross-entropy node per ponder depth `0..=K`.
    ce_sums: Vec<NodeId>,
    n_tokens: usize,
}

/// One optimizer update on `∇(L_CE + L_aux)` over `batch`. Deterministic
/// given parameters, optimizer state, and batch content.
pub fn train_step<F: Real>(
    step: usize,
    batch: &[Vec<u32>],
    params: &mut Parameters<F>,
    opt: &mut AdamW<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(CoreError::Data("empty training batch".into()));
    }
    let k_max = ponder.max_steps;

    // Phase 1: forward tapes, one per window.
    let mut seqs: Vec<SeqGraph<F>> = Vec::with_capacity(batch.len());
    for window in batch {
        // Validates ids, window length, and position capacity; the layout
        // drives the graph construction.
        let layout = build_interleaved::<F>(window, params, config, ponder)?.layout;
        let mut tape = Tape::new();
        let leaves = params.leaves(&mut tape);
        let graph = jacobi_graph(&mut tape, window, &leaves, &layout, config, ponder);
        let ce_sums = (0..=k_max)
            .map(|depth| {
                let integrated = partial_integration_graph(
                    &mut tape,
                    graph.h_final,
                    graph.step_probs,
                    &layout,
                    depth,
                );
                ce_sum_graph(&mut tape, &leaves, integrated, window)
            })
            .collect::<Result<Vec<_>>>()?;
        seqs.push(SeqGraph { tape, leaves, graph, ce_sums, n_tokens: window.len() });
    }

    // Phase 2: batch-level quantities (plain numbers, no gradients).
    let n_supervised: usize = seqs.iter().map(|s| s.n_tokens - 1).sum();
    let inv_n = 1.0 / n_supervised as f64;
    let mut ce = vec![0.0f64; k_max + 1];
    for s in &seqs {
        for (depth, &node) in s.ce_sums.iter().enumerate() {
            ce[depth] += s.tape.value(node)[[0, 0]].as_f64();
        }
    }
    for c in &mut ce {
        *c *= inv_n;
    }

    let total_tokens: usize = seqs.iter().map(|s| s.n_tokens).sum();
    let mut stacked = Array2::<F>::zeros((total_tokens, k_max + 1));
    let mut offsets = Vec::with_capacity(seqs.len());
    let mut row = 0;
    for s in &seqs {
        offsets.push(row);
        stacked
            .slice_mut(s![row..row + s.n_tokens, ..])
            .assign(s.tape.value(s.graph.mask_scores));
        row += s.n_tokens;
    }

    // In fixed-step mode the mask is constant 1, so the penalty would be a
    // gradient-free constant; skip it and train the uniform-depth model.
    let aux_active =
        k_max > 0 && ponder.lambda > 0.0 && matches!(ponder.mode, PonderMode::Adaptive);
    let report = aux_loss_from_ce(&stacked, &ce, if aux_active { ponder.lambda } else { 0.0 });

    let avg_w: Vec<f64> = (1..=k_max)
        .map(|k| {
            stacked.column(k).iter().map(|v| v.as_f64()).sum::<f64>() / total_tokens as f64
        })
        .collect();

    let loss_ce = ce[k_max];
    let loss_aux = report.total;
    if !(loss_ce + loss_aux).is_finite() {
        return Err(CoreError::Numeric(format!(
            "non-finite loss at step {step}: ce {loss_ce}, penalty {loss_aux}, per-depth ce {ce:?}"
        )));
    }

    // Phase 3: finish each tape with its share of the loss and accumulate
    // gradients in canonical parameter order.
    let mut acc: Vec<Array2<F>> = Vec::new();
    params.visit(|_, t| acc.push(Array2::zeros(t.dim())));

    for (b, s) in seqs.iter_mut().enumerate() {
        let mut loss = s.tape.scale(s.ce_sums[k_max], fr::<F>(inv_n));
        if aux_active {
            for (ki, rows) in report.selected.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                let k = ki + 1;
                let lo = offsets[b];
                let hi = lo + s.n_tokens;
                let entries: Vec<(usize, usize)> = rows
                    .iter()
                    .filter(|&&r| (lo..hi).contains(&r))
                    .map(|&r| (r - lo, k))
                    .collect();
                if entries.is_empty() {
                    continue;
                }
                let gathered = s.tape.gather_entries(s.graph.mask_scores, Arc::new(entries));
                let sum = s.tape.sum_all(gathered);
                let term = s.tape.scale(sum, fr::<F>(ponder.lambda / rows.len() as f64));
                loss = s.tape.add(loss, term);
            }
        }
        let grads = s.tape.backward(loss);
        let mut slot = 0;
        s.leaves.visit(|_, id| {
            if let Some(g) = grads.wrt(id) {
                acc[slot] += g;
            }
            slot += 1;
        });
    }

    let grad_norm = opt.apply(params, &acc)?;

    Ok(StepMetrics { step, loss_ce, loss_aux, ce, avg_w, grad_norm, aux: report })
}

/// Owns everything a training run needs: parameters, optimizer state, and
/// the window sampler. Stepping is deterministic given the seeds.
pub struct Trainer<F: Real> {
    pub params: Parameters<F>,
    pub opt: AdamW<F>,
    pub config: ModelConfig,
    pub ponder: PonderSettings,
    pub train: TrainConfig,
    sampler: WindowSampler,
    step: usize,
}

impl<F: Real> Trainer<F> {
    pub fn new(config: ModelConfig, ponder: PonderSettings, train: TrainConfig) -> Result<Self> {
        config.validate()?;
        config.validate_for_byte_tokenizer()?;
        ponder.validate()?;
        train.validate()?;
        let params = Parameters::init(&config, &ponder)?;
        Self::from_params(params, config, ponder, train)
    }

    /// Resume training from existing parameters (e.g. a checkpoint).
    pub fn from_params(
        params: Parameters<F>,
        config: ModelConfig,
        ponder: PonderSettings,
        train: TrainConfig,
    ) -> Result<Self> {
        train.validate()?;
        let opt = AdamW::new(&params, train.optimizer.clone(), train.total_steps)?;
        let sampler = WindowSampler::new(train.seed, train.window_len)?;
        Ok(Self { params, opt, config, ponder, train, sampler, step: 0 })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Samples one batch from `data` and applies one optimizer update.
    pub fn step(&mut self, data: &[u32]) -> Result<StepMetrics> {
        let batch = self.sampler.batch(data, self.train.batch_size)?;
        self.step += 1;
        train_step(
            self.step,
            &batch,
            &mut self.params,
            &mut self.opt,
            &self.config,
            &self.ponder,
        )
    }

    /// Runs until `total_steps`, invoking `on_step` after every update.
    pub fn run(
        &mut self,
        data: &[u32],
        mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
    ) -> Result<()> {
        while self.step < self.train.total_steps {
            let metrics = self.step(data)?;
            on_step(&metrics)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_corpus, synthetic_corpus};
    use crate::tokenizer::MIN_VOCAB;

    fn small_setup(k: usize) -> (ModelConfig, PonderSettings, TrainConfig) {
        let (mut config, mut ponder) = crate::config::tests_support::tiny_setup(k);
        config.vocab_size = MIN_VOCAB;
        config.d_model = 32;
        config.n_layers = 1;
        config.n_heads = 2;
        config.d_head = 16;
        config.d_ff = 64;
        config.seed = 11;
        ponder.jacobi_iters = 2;
        let train = TrainConfig {
            batch_size: 2,
            window_len: 12,
            total_steps: 200,
            eval_interval: 50,
            seed: 5,
            held_out_fraction: 0.05,
            data_path: None,
            optimizer: OptimizerConfig::with_lr(3e-3),
        };
        (config, ponder, train)
    }

    fn sample_batch(train: &TrainConfig, corpus_seed: u64) -> Vec<Vec<u32>> {
        let text = synthetic_corpus(corpus_seed, 8 * 1024);
        let corpus = load_corpus(&text, 0.05).unwrap();
        let mut sampler = WindowSampler::new(train.seed, train.window_len).unwrap();
        sampler.batch(&corpus.train, train.batch_size).unwrap()
    }

    #[test]
    fn lambda_zero_matches_a_pure_ce_step() {
        let (config, mut ponder, train) = small_setup(2);
        ponder.lambda = 0.0;
        let batch = sample_batch(&train, 1);

        let mut params_a = Parameters::<f64>::init(&config, &ponder).unwrap();
        let params_b = params_a.clone();
        let mut opt_a = AdamW::new(&params_a, train.optimizer.clone(), 10).unwrap();
        train_step(1, &batch, &mut params_a, &mut opt_a, &config, &ponder).unwrap();

        // Independent cross-entropy-only step: same graphs, loss built with
        // no penalty terms at all.
        let mut params = params_b;
        let mut opt_b = AdamW::new(&params, train.optimizer.clone(), 10).unwrap();
        let n_sup: usize = batch.iter().map(|w| w.len() - 1).sum();
        let mut acc: Vec<Array2<f64>> = Vec::new();
        params.visit(|_, t| acc.push(Array2::zeros(t.dim())));
        for window in &batch {
            let layout = build_interleaved::<f64>(window, &params, &config, &ponder)
                .unwrap()
                .layout;
            let mut tape = Tape::new();
            let leaves = params.leaves(&mut tape);
            let graph = jacobi_graph(&mut tape, window, &leaves, &layout, &config, &ponder);
            let integrated = partial_integration_graph(
                &mut tape,
                graph.h_final,
                graph.step_probs,
                &layout,
                ponder.max_steps,
            );
            let ce_sum = ce_sum_graph(&mut tape, &leaves, integrated, window).unwrap();
            let loss = tape.scale(ce_sum, 1.0 / n_sup as f64);
            let grads = tape.backward(loss);
            let mut slot = 0;
            leaves.visit(|_, id| {
                if let Some(g) = grads.wrt(id) {
                    acc[slot] += g;
                }
                slot += 1;
            });
        }
        opt_b.apply(&mut params, &acc).unwrap();

        let mut pairs = Vec::new();
        params_a.visit(|name, t| pairs.push((name.to_string(), t.clone())));
        let mut slot = 0;
        params.visit(|name, t| {
            assert_eq!(pairs[slot].0, name);
            assert_eq!(
                pairs[slot].1, *t,
                "tensor {name} differs from the pure cross-entropy step"
            );
            slot += 1;
        });
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let (config, ponder, mut train) = small_setup(2);
        train.total_steps = 3;
        let text = synthetic_corpus(2, 8 * 1024);
        let corpus = load_corpus(&text, 0.05).unwrap();

        let run = |cfg: &ModelConfig, pond: &PonderSettings, tr: &TrainConfig| {
            let mut t = Trainer::<f32>::new(cfg.clone(), pond.clone(), tr.clone()).unwrap();
            let mut rows = Vec::new();
            t.run(&corpus.train, |m| {
                rows.push(m.csv_row());
                Ok(())
            })
            .unwrap();
            let mut flat = Vec::new();
            t.params.visit(|_, tensor| flat.extend(tensor.iter().map(|v| v.to_bits())));
            (rows, flat)
        };
        let (rows1, bits1) = run(&config, &ponder, &train);
        let (rows2, bits2) = run(&config, &ponder, &train);
        assert_eq!(rows1, rows2);
        assert_eq!(bits1, bits2, "parameters must be bit-identical");
        assert_eq!(rows1.len(), 3);
    }

    #[test]
    fn smoke_run_reduces_training_ce() {
        let (config, ponder, train) = small_setup(2);
        let text = synthetic_corpus(3, 100 * 1024);
        let corpus = load_corpus(&text, train.held_out_fraction).unwrap();
        let mut trainer = Trainer::<f32>::new(config, ponder, train).unwrap();
        let mut last = f64::INFINITY;
        trainer
            .run(&corpus.train, |m| {
                last = m.loss_ce;
                Ok(())
            })
            .unwrap();
        let initial = (MIN_VOCAB as f64).ln();
        assert!(
            last < initial,
            "after {} steps, cross-entropy {last} should be below ln(vocab) = {initial:.4}",
            trainer.steps_done()
        );
    }

    #[test]
    fn penalty_gradient_touches_only_selected_scores() {
        let (config, mut ponder, train) = small_setup(3);
        ponder.lambda = 0.5;
        // Nonzero router so the mask scores are not all at the uniform point.
        config.validate().unwrap();
        let mut params = Parameters::<f64>::init(&config, &ponder).unwrap();
        for v in params.router.iter_mut() {
            *v = 0.01 * (1.0 + *v);
        }
        let window = sample_batch(&train, 4).remove(0);
        let layout = build_interleaved::<f64>(&window, &params, &config, &ponder)
            .unwrap()
            .layout;
        let mut tape = Tape::new();
        let leaves = params.leaves(&mut tape);
        let graph = jacobi_graph(&mut tape, &window, &leaves, &layout, &config, &ponder);

        let scores = tape.value(graph.mask_scores).clone();
        let ce = vec![1.2, 0.9, 0.5, 0.45];
        let report = aux_loss_from_ce(&scores, &ce, ponder.lambda);
        assert!(report.selected.iter().any(|s| !s.is_empty()), "fixture must select something");

        // Penalty-only loss.
        let mut loss = None;
        for (ki, rows) in report.selected.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let entries: Vec<(usize, usize)> = rows.iter().map(|&r| (r, ki + 1)).collect();
            let g = tape.gather_entries(graph.mask_scores, Arc::new(entries));
            let sum = tape.sum_all(g);
            let term = tape.scale(sum, ponder.lambda / rows.len() as f64);
            loss = Some(match loss {
                None => term,
                Some(l) => tape.add(l, term),
            });
        }
        let grads = tape.backward(loss.unwrap());
        let gw = grads.wrt(graph.mask_scores).expect("penalty depends on the mask");
        for t in 0..scores.dim().0 {
            for k in 1..scores.dim().1 {
                let selected = report.selected[k - 1].contains(&t);
                let g = gw[[t, k]];
                if selected {
                    assert!(g > 0.0, "selected ({t},{k}) must be pushed down, grad {g}");
                } else {
                    assert_eq!(g, 0.0, "unselected ({t},{k}) must be untouched");
                }
            }
        }
        // The pressure reaches the router through the mask-score path.
        let router_grad = grads.wrt(leaves.router).expect("router feeds the mask");
        assert!(router_grad.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn fixed_step_mode_trains_the_uniform_depth_backbone() {
        let (config, mut ponder, train) = small_setup(2);
        ponder.mode = PonderMode::FixedStep;
        ponder.lambda = 0.5; // must be ignored in fixed-step mode
        let batch = sample_batch(&train, 6);
        let mut params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let mut opt = AdamW::new(&params, train.optimizer.clone(), 10).unwrap();
        let m = train_step(1, &batch, &mut params, &mut opt, &config, &ponder).unwrap();
        assert_eq!(m.loss_aux, 0.0);
        for &w in &m.avg_w {
            assert_eq!(w, 1.0, "fixed-step mask must stay saturated");
        }
        // The router receives no gradient and starts at zero, so it stays
        // exactly zero (decoupled decay scales zero to zero).
        assert!(params.router.iter().all(|&v| v == 0.0));
        // Depths below K integrate nothing: their proxy loss is the
        // uniform-logits value from a zero state.
        let ln_v = (config.vocab_size as f64).ln();
        assert!((m.ce[0] - ln_v).abs() < 1e-9);
        assert!((m.ce[1] - ln_v).abs() < 1e-9);
        assert!(m.ce[2].is_finite() && m.ce[2] != m.ce[0]);
    }

    #[test]
    fn csv_schema_matches_the_metrics() {
        assert_eq!(
            metrics_csv_header(2),
            "step,loss_ce,loss_aux,ce_0,ce_1,ce_2,avg_w_1,avg_w_2,grad_norm"
        );
        let m = StepMetrics {
            step: 7,
            loss_ce: 1.25,
            loss_aux: 0.5,
            ce: vec![2.0, 1.5, 1.25],
            avg_w: vec![0.75, 0.25],
            grad_norm: 3.0,
            aux: aux_loss_from_ce::<f64>(&Array2::ones((1, 3)), &[2.0, 1.5, 1.25], 0.0),
        };
        let row = m.csv_row();
        assert_eq!(row.split(',').count(), metrics_csv_header(2).split(',').count());
        assert!(row.starts_with("7,1.250000,0.500000,2.000000,"));
    }

    #[test]
    fn configs_are_validated() {
        let (config, ponder, train) = small_setup(1);
        let bad = TrainConfig { batch_size: 0, ..train.clone() };
        assert!(Trainer::<f32>::new(config.clone(), ponder.clone(), bad).is_err());
        let bad = TrainConfig { window_len: 1, ..train.clone() };
        assert!(Trainer::<f32>::new(config.clone(), ponder.clone(), bad).is_err());
        let bad = TrainConfig { total_steps: 0, ..train.clone() };
        assert!(Trainer::<f32>::new(config.clone(), ponder.clone(), bad).is_err());
        let bad = TrainConfig { held_out_fraction: 1.0, ..train };
        assert!(Trainer::<f32>::new(config, ponder, bad).is_err());
    }
}
