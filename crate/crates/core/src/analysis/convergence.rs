//! How fast parallel refinement approaches sequential decoding.
//!
//! Because the interleaved layout is causal, row i of a window is exact
//! after i+1 refinement iterations, so running as many iterations as the
//! window has rows IS the sequential fixed point — bitwise, since one more
//! iteration reproduces it. The RMSE of iterate n against that fixed point,
//! fitted as A·Lⁿ on a log scale, measures the effective contraction rate
//! that makes few-iteration parallel training viable.

use std::fmt;

use crate::config::{ModelConfig, PonderSettings};
use crate::error::{CoreError, Result};
use crate::interleave::build_interleaved;
use crate::jacobi::run_jacobi;
use crate::params::Parameters;
use crate::real::Real;

/// What the RMSE sequence was measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointRef {
    /// Exact: as many iterations as the window has rows.
    Sequential,
    /// A fixed iteration budget, cheaper for long windows but approximate.
    JacobiProxy { iters: usize },
}

impl fmt::Display for FixedPointRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixedPointRef::Sequential => write!(f, "sequential"),
            FixedPointRef::JacobiProxy { iters } => write!(f, "jacobi_proxy(iters={iters})"),
        }
    }
}

/// RMSE-per-iteration curve with its geometric fit.
#[derive(Debug, Clone)]
pub struct ConvergenceFit {
    /// `rmse[n-1]` = RMSE of iterate n against the fixed point, n = 1..
    pub rmse: Vec<f64>,
    /// Fitted A of `rmse_n ≈ A·Lⁿ`.
    pub amplitude: f64,
    /// Fitted contraction factor L.
    pub contraction: f64,
    /// Goodness of the log-scale least-squares fit.
    pub r_squared: f64,
    /// What the curve was measured against.
    pub reference: FixedPointRef,
}

impl ConvergenceFit {
    /// `n,rmse` rows followed by a fit summary comment line.
    pub fn csv(&self) -> String {
        let mut out = String::from("n,rmse\n");
        for (i, r) in self.rmse.iter().enumerate() {
            out.push_str(&format!("{},{:.6e}\n", i + 1, r));
        }
        out.push_str(&format!(
            "# fit amplitude={:.6e} contraction={:.6} r2={:.6} reference={}\n",
            self.amplitude, self.contraction, self.r_squared, self.reference
        ));
        out
    }
}

/// Least-squares fit of `rmse_n ≈ A·Lⁿ` (n starting at 1) on the log
/// scale. Zero entries are the already-converged tail and are excluded;
/// an all-zero sequence reports an exact fit with A = L = 0.
pub fn fit_geometric(rmse: &[f64]) -> Result<(f64, f64, f64)> {
    if rmse.is_empty() {
        return Err(CoreError::Shape("cannot fit an empty RMSE sequence".into()));
    }
    if rmse.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(CoreError::Numeric(
            "RMSE values must be finite and nonnegative".into(),
        ));
    }
    let positive: Vec<(f64, f64)> = rmse
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > 0.0)
        .map(|(i, r)| ((i + 1) as f64, *r))
        .collect();
    let pts: Vec<(f64, f64)> = positive.iter().map(|(x, r)| (*x, r.ln())).collect();
    match pts.len() {
        0 => Ok((0.0, 0.0, 1.0)),
        1 => Ok((positive[0].1, 0.0, 1.0)),
        n => {
            let nf = n as f64;
            let x_bar = pts.iter().map(|p| p.0).sum::<f64>() / nf;
            let y_bar = pts.iter().map(|p| p.1).sum::<f64>() / nf;
            let sxx: f64 = pts.iter().map(|p| (p.0 - x_bar).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|p| (p.0 - x_bar) * (p.1 - y_bar)).sum();
            let slope = sxy / sxx;
            let intercept = y_bar - slope * x_bar;
            let ss_res: f64 = pts
                .iter()
                .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
                .sum();
            let ss_tot: f64 = pts.iter().map(|p| (p.1 - y_bar).powi(2)).sum();
            let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
            Ok((intercept.exp(), slope.exp(), r2))
        }
    }
}

/// Measures, over `windows`, the RMSE of refinement iterates 1..n_max
/// against the fixed point, then fits the geometric decay. `proxy_iters`
/// substitutes a fixed iteration budget for the exact per-window row
/// count (it must cover `n_max`).
pub fn jacobi_convergence<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    windows: &[Vec<u32>],
    n_max: usize,
    proxy_iters: Option<usize>,
) -> Result<ConvergenceFit> {
    if n_max < 3 {
        return Err(CoreError::Config(
            "the convergence curve needs at least 3 iterations".into(),
        ));
    }
    if windows.is_empty() {
        return Err(CoreError::Data("no windows to measure".into()));
    }
    if let Some(p) = proxy_iters {
        if p < n_max {
            return Err(CoreError::Config(format!(
                "a proxy fixed point of {p} iterations cannot judge {n_max} iterates"
            )));
        }
    }

    let mut sq_sums = vec![0.0f64; n_max];
    let mut counts = vec![0usize; n_max];
    for window in windows {
        let seq = build_interleaved::<F>(window, params, config, ponder)?;
        let target_iters = proxy_iters.unwrap_or_else(|| seq.layout.len());
        let fixed = run_jacobi(&seq, params, config, ponder, target_iters, false)?.states;
        let trace = run_jacobi(&seq, params, config, ponder, n_max, true)?.snapshots;
        for (n, snapshot) in trace.iter().enumerate() {
            let sq: f64 = snapshot
                .iter()
                .zip(fixed.iter())
                .map(|(a, b)| {
                    let d = a.as_f64() - b.as_f64();
                    d * d
                })
                .sum();
            sq_sums[n] += sq;
            counts[n] += snapshot.len();
        }
    }

    let rmse: Vec<f64> = sq_sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (s / c as f64).sqrt())
        .collect();
    let (amplitude, contraction, r_squared) = fit_geometric(&rmse)?;
    Ok(ConvergenceFit {
        rmse,
        amplitude,
        contraction,
        r_squared,
        reference: match proxy_iters {
            None => FixedPointRef::Sequential,
            Some(iters) => FixedPointRef::JacobiProxy { iters },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::tests_support::tiny_setup;

    #[test]
    fn exact_geometric_sequences_are_recovered() {
        let (a, l, r2) = fit_geometric(&[1.0, 0.5, 0.25]).unwrap();
        assert!((a - 2.0).abs() < 1e-8);
        assert!((l - 0.5).abs() < 1e-8);
        assert!((r2 - 1.0).abs() < 1e-12);

        let rmse: Vec<f64> = (1..=8).map(|n| 0.3 * 0.7f64.powi(n)).collect();
        let (a, l, r2) = fit_geometric(&rmse).unwrap();
        assert!((a - 0.3).abs() < 1e-8);
        assert!((l - 0.7).abs() < 1e-8);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sequences_report_exact_fits() {
        assert_eq!(fit_geometric(&[0.0, 0.0, 0.0]).unwrap(), (0.0, 0.0, 1.0));
        let (a, l, r2) = fit_geometric(&[0.125, 0.0, 0.0]).unwrap();
        assert_eq!((a, l, r2), (0.125, 0.0, 1.0));
        assert!(matches!(
            fit_geometric(&[]).unwrap_err(),
            CoreError::Shape(_)
        ));
        assert!(matches!(
            fit_geometric(&[0.5, -0.1]).unwrap_err(),
            CoreError::Numeric(_)
        ));
        assert!(matches!(
            fit_geometric(&[0.5, f64::NAN]).unwrap_err(),
            CoreError::Numeric(_)
        ));
    }

    #[test]
    fn iterates_hit_the_fixed_point_at_the_row_count() {
        let (config, ponder) = tiny_setup(1);
        let params = Parameters::<f64>::init(&config, &ponder).unwrap();
        // 2 tokens × (1 observed + 1 latent slot) = 4 rows: iterates 4..
        // must be bitwise equal to the sequential fixed point.
        let windows = vec![vec![256u32, 104], vec![256, 41]];
        let fit = jacobi_convergence(&params, &config, &ponder, &windows, 6, None).unwrap();
        assert_eq!(fit.rmse.len(), 6);
        assert!(fit.rmse[0].is_finite() && fit.rmse[0] > 0.0);
        assert_eq!(fit.rmse[3], 0.0);
        assert_eq!(fit.rmse[4], 0.0);
        assert_eq!(fit.rmse[5], 0.0);
        assert_eq!(fit.reference, FixedPointRef::Sequential);
        assert!(fit.contraction >= 0.0);
    }

    #[test]
    fn proxy_references_are_flagged_and_validated() {
        let (config, ponder) = tiny_setup(1);
        let params = Parameters::<f64>::init(&config, &ponder).unwrap();
        let windows = vec![vec![256u32, 104, 105]];
        let fit =
            jacobi_convergence(&params, &config, &ponder, &windows, 3, Some(10)).unwrap();
        assert_eq!(fit.reference, FixedPointRef::JacobiProxy { iters: 10 });
        assert!(matches!(
            jacobi_convergence(&params, &config, &ponder, &windows, 4, Some(3)).unwrap_err(),
            CoreError::Config(_)
        ));
        assert!(matches!(
            jacobi_convergence(&params, &config, &ponder, &windows, 2, None).unwrap_err(),
            CoreError::Config(_)
        ));
        assert!(matches!(
            jacobi_convergence::<f64>(&params, &config, &ponder, &[], 3, None).unwrap_err(),
            CoreError::Data(_)
        ));
    }

    #[test]
    fn csv_has_rows_and_a_fit_summary() {
        let fit = ConvergenceFit {
            rmse: vec![0.5, 0.25],
            amplitude: 1.0,
            contraction: 0.5,
            r_squared: 1.0,
            reference: FixedPointRef::Sequential,
        };
        let csv = fit.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,rmse");
        assert!(lines[1].starts_with("1,"));
        assert!(lines[2].starts_with("2,"));
        assert!(lines[3].starts_with("# fit amplitude="));
        assert!(lines[3].contains("reference=sequential"));
    }
}
