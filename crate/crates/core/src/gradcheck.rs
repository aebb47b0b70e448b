//! Central finite-difference verification of reverse-mode gradients, plus
//! the single-window training objective in two independent forms: a pure
//! value-path evaluation (the differencing oracle) and the tape-built
//! version whose gradients are under test.

use ndarray::Array2;

use crate::config::{ModelConfig, PonderSettings};
use crate::error::{CoreError, Result};
use crate::interleave::build_interleaved;
use crate::jacobi::{jacobi_graph, run_jacobi};
use crate::loss::{aux_loss_from_ce, ce_sum_graph, mean_ce_rows, partial_integration_graph};
use crate::params::Parameters;
use crate::tape::Tape;

/// Worst coordinate found by [`gradient_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub worst_coord: (usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares `analytic` gradients (canonical tensor order) against central
/// finite differences of `loss`, element-wise, over the tensors named in
/// `subset` (every tensor when empty). Relative error per coordinate is
/// `|a − fd| / max(|a|, |fd|, rel_floor)`.
pub fn gradient_check(
    params: &mut Parameters<f64>,
    mut loss: impl FnMut(&Parameters<f64>) -> Result<f64>,
    analytic: &[Array2<f64>],
    subset: &[&str],
    epsilon: f64,
    rel_floor: f64,
) -> Result<GradCheckReport> {
    let names = params.tensor_names();
    if analytic.len() != names.len() {
        return Err(CoreError::Shape(format!(
            "{} analytic gradients for {} parameter tensors",
            analytic.len(),
            names.len()
        )));
    }
    for want in subset {
        if !names.iter().any(|n| n == want) {
            return Err(CoreError::Config(format!("unknown tensor `{want}` in subset")));
        }
    }

    let mut report = GradCheckReport {
        coords_checked: 0,
        max_rel_err: 0.0,
        worst_tensor: String::new(),
        worst_coord: (0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (slot, name) in names.iter().enumerate() {
        if !subset.is_empty() && !subset.iter().any(|s| s == name) {
            continue;
        }
        let dim = analytic[slot].dim();
        for i in 0..dim.0 {
            for j in 0..dim.1 {
                nudge(params, name, (i, j), epsilon);
                let up = loss(params)?;
                nudge(params, name, (i, j), -2.0 * epsilon);
                let down = loss(params)?;
                nudge(params, name, (i, j), epsilon);
                let fd = (up - down) / (2.0 * epsilon);
                let a = analytic[slot][[i, j]];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(rel_floor);
                report.coords_checked += 1;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst_tensor = name.clone();
                    report.worst_coord = (i, j);
                    report.worst_analytic = a;
                    report.worst_numeric = fd;
                }
            }
        }
    }
    Ok(report)
}

fn nudge(params: &mut Parameters<f64>, name: &str, idx: (usize, usize), delta: f64) {
    params.visit_mut(|n, t| {
        if n == name {
            t[idx] += delta;
        }
    });
}

/// The per-window training objective — full-depth mean cross-entropy plus
/// the recomputed minimum-ponder penalty — evaluated entirely through the
/// value-level forward path (no tape).
pub fn window_loss_value(
    params: &Parameters<f64>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    window: &[u32],
) -> Result<f64> {
    let seq = build_interleaved::<f64>(window, params, config, ponder)?;
    let out = run_jacobi(&seq, params, config, ponder, ponder.jacobi_iters, false)?;
    let layout = &seq.layout;
    let n = layout.n_tokens();
    let d = config.d_model;
    let k_max = ponder.max_steps;
    let targets = &window[1..];

    let mut ce = vec![0.0f64; k_max + 1];
    for (depth, slot) in ce.iter_mut().enumerate() {
        let mut integrated = Array2::<f64>::zeros((n - 1, d));
        for t in 0..n - 1 {
            for k in 0..=depth {
                let state = out.states.row(layout.row(t, k));
                let p = out.step_probs[[t, k]];
                integrated.row_mut(t).zip_mut_with(&state, |acc, &v| *acc += p * v);
            }
        }
        let logits = crate::backbone::lm_logits(params, &integrated);
        *slot = mean_ce_rows(&logits, targets)?;
    }

    let report = aux_loss_from_ce(&out.mask_scores, &ce, ponder.lambda);
    Ok(ce[k_max] + report.total)
}

/// The same objective built on a tape (exactly as one training step does
/// for a single window). Returns the loss value and the canonical-order
/// parameter gradients.
pub fn window_loss_grads(
    params: &Parameters<f64>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    window: &[u32],
) -> Result<(f64, Vec<Array2<f64>>)> {
    let layout = build_interleaved::<f64>(window, params, config, ponder)?.layout;
    let k_max = ponder.max_steps;
    let inv_n = 1.0 / (window.len() - 1) as f64;

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

    let ce: Vec<f64> = ce_sums
        .iter()
        .map(|&node| tape.value(node)[[0, 0]] * inv_n)
        .collect();
    let scores = tape.value(graph.mask_scores).clone();
    let report = aux_loss_from_ce(&scores, &ce, ponder.lambda);

    let mut loss = tape.scale(ce_sums[k_max], inv_n);
    for (ki, rows) in report.selected.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let entries: Vec<(usize, usize)> = rows.iter().map(|&r| (r, ki + 1)).collect();
        let gathered = tape.gather_entries(graph.mask_scores, std::sync::Arc::new(entries));
        let sum = tape.sum_all(gathered);
        let term = tape.scale(sum, ponder.lambda / rows.len() as f64);
        loss = tape.add(loss, term);
    }

    let value = tape.value(loss)[[0, 0]];
    let grads = tape.backward(loss);
    let mut out = Vec::new();
    leaves.visit(|_, id| {
        out.push(match grads.wrt(id) {
            Some(g) => g.clone(),
            None => Array2::zeros((0, 0)),
        });
    });
    // Give ungrazed tensors zero gradients of the right shape.
    let mut slot = 0;
    params.visit(|_, t| {
        if out[slot].dim() == (0, 0) {
            out[slot] = Array2::zeros(t.dim());
        }
        slot += 1;
    });
    Ok((value, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests_support::tiny_setup;

    #[test]
    fn quadratic_toy_is_checked_to_high_precision() {
        let (config, ponder) = tiny_setup(1);
        let mut params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let center = params.embedding.mapv(|v| v * 0.5 + 0.1);
        let loss = |p: &Parameters<f64>| {
            Ok((&p.embedding - &center).mapv(|d| d * d).sum())
        };
        let mut analytic = Vec::new();
        params.visit(|_, t| analytic.push(Array2::zeros(t.dim())));
        analytic[0] = (&params.embedding - &center) * 2.0;
        let report = gradient_check(
            &mut params,
            loss,
            &analytic,
            &["embedding"],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.coords_checked, params.embedding.len());
        assert!(report.max_rel_err < 1e-8, "worst {:?}", report);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let (config, ponder) = tiny_setup(1);
        let mut params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let mut analytic = Vec::new();
        params.visit(|_, t| analytic.push(Array2::zeros(t.dim())));
        let report = gradient_check(
            &mut params,
            |_| Ok(42.0),
            &analytic,
            &["router", "final_norm.gain"],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn unknown_subset_and_slot_counts_are_rejected() {
        let (config, ponder) = tiny_setup(1);
        let mut params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let err = gradient_check(&mut params, |_| Ok(0.0), &[], &[], 1e-5, 1e-6).unwrap_err();
        assert_eq!(err.category(), "shape");
        let mut analytic = Vec::new();
        params.visit(|_, t| analytic.push(Array2::zeros(t.dim())));
        let err = gradient_check(&mut params, |_| Ok(0.0), &analytic, &["nope"], 1e-5, 1e-6)
            .unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn full_window_objective_gradients_match_differences() {
        let (mut config, mut ponder) = tiny_setup(2);
        config.d_model = 8;
        config.n_layers = 1;
        config.n_heads = 2;
        config.d_head = 4;
        config.d_ff = 16;
        config.seed = 3;
        ponder.lambda = 0.1;
        ponder.jacobi_iters = 2;
        let mut params = Parameters::<f64>::init(&config, &ponder).unwrap();
        // A slightly off-zero router so the mask scores are informative.
        for (i, v) in params.router.iter_mut().enumerate() {
            *v = 0.01 * ((i % 7) as f64 - 3.0);
        }
        let window = vec![256u32, 104, 101, 108, 108];

        let (graph_value, analytic) =
            window_loss_grads(&params, &config, &ponder, &window).unwrap();
        let direct = window_loss_value(&params, &config, &ponder, &window).unwrap();
        assert!(
            (graph_value - direct).abs() < 1e-10,
            "objective paths disagree: {graph_value} vs {direct}"
        );

        let report = gradient_check(
            &mut params,
            |p| window_loss_value(p, &config, &ponder, &window),
            &analytic,
            &[],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.coords_checked > 4000, "covered {}", report.coords_checked);
        assert!(
            report.max_rel_err < 1e-4,
            "worst tensor {} at {:?}: analytic {} vs fd {} (rel {})",
            report.worst_tensor,
            report.worst_coord,
            report.worst_analytic,
            report.worst_numeric,
            report.max_rel_err
        );
    }
}
