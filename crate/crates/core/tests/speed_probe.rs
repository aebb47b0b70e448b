//! Temporary fixture-tuning probe; deleted once budgets are pinned.

use std::time::Instant;

use ponder_core::config::{ModelConfig, PonderSettings};
use ponder_core::data::{load_corpus, synthetic_corpus};
use ponder_core::eval::{evaluate_perplexity, DepthMode};
use ponder_core::optimizer::OptimizerConfig;
use ponder_core::trainer::{TrainConfig, Trainer};

#[test]
fn probe_pruning_emergence() {
    let config = ModelConfig {
        vocab_size: 259,
        d_model: 128,
        n_layers: 2,
        n_heads: 4,
        d_head: 32,
        d_ff: 384,
        max_position: 4096,
        rope_base: 10000.0,
        distinct_latent_positions: false,
        router_post_norm: true,
        attention: ponder_core::AttentionImpl::SoftMask,
        norm_eps: 1e-5,
        seed: 42,
    };
    let mut ponder = PonderSettings::with_max_steps(3);
    ponder.lambda = 0.1;
    let total = 2400usize;
    let train = TrainConfig {
        batch_size: 4,
        window_len: 48,
        total_steps: total,
        eval_interval: usize::MAX,
        seed: 7,
        held_out_fraction: 0.05,
        data_path: None,
        optimizer: OptimizerConfig {
            lr: 1.5e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_steps: 30,
            grad_clip: 1.0,
            final_lr_fraction: 0.05,
        },
    };
    let corpus = load_corpus(&synthetic_corpus(1, 1 << 20), 0.05).unwrap();
    let mut trainer = Trainer::<f32>::new(config.clone(), ponder.clone(), train).unwrap();
    let t0 = Instant::now();
    for step in 1..=total {
        let m = trainer.step(&corpus.train).unwrap();
        if step % 200 == 0 {
            println!(
                "step {:>4} loss_ce {:.4} aux {:.5} ce {:?} avg_w {:?} ({:.0}s)",
                step,
                m.loss_ce,
                m.loss_aux,
                m.ce.iter().map(|c| (c * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                m.avg_w.iter().map(|w| (w * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                t0.elapsed().as_secs_f64()
            );
        }
    }
    println!("trained in {:.0}s", t0.elapsed().as_secs_f64());
    let adaptive = evaluate_perplexity(
        &trainer.params,
        &config,
        &ponder,
        &corpus.held_out,
        48,
        Some(256),
        DepthMode::Adaptive,
    )
    .unwrap();
    let full = evaluate_perplexity(
        &trainer.params,
        &config,
        &ponder,
        &corpus.held_out,
        48,
        Some(256),
        DepthMode::Full,
    )
    .unwrap();
    let mut hist = [0usize; 4];
    for r in &adaptive.records {
        hist[r.khat] += 1;
    }
    println!(
        "held-out: adaptive nll {:.4} avg steps {:.4}, full nll {:.4}; khat histogram {:?}",
        adaptive.mean_nll, adaptive.avg_exec_steps, full.mean_nll, hist
    );
}
