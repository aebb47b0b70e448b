//! Intrinsic token difficulty and the marginal utility of extra steps.
//!
//! A token's difficulty is the NLL its step-0 state alone assigns to the
//! next token — how hard the prediction is before any extra computation.
//! Bucketing tokens by difficulty and measuring how much each additional
//! step improves CE shows where the compute budget actually pays off.

use ndarray::Axis;

use crate::backbone::lm_logits;
use crate::config::{ModelConfig, PonderSettings};
use crate::data::WindowSampler;
use crate::decode::{token_nll, DecodeSession};
use crate::error::{CoreError, Result};
use crate::params::Parameters;
use crate::ponder::{weighted_integration, LatentStates};
use crate::real::Real;

/// Per-token difficulty probe: all depths are executed regardless of the
/// stopping rule so that every `ce_i` is measurable.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDifficultyRecord {
    /// Scored-token index across the whole pass (unique join key).
    pub pos: usize,
    /// Intrinsic difficulty: NLL of the next token from `h_0` alone.
    pub l_t: f64,
    /// What the stopping rule would have executed.
    pub khat: usize,
    /// `ce[i]` = NLL of the next token with integration truncated at
    /// depth i, for i = 0..K.
    pub ce: Vec<f64>,
}

/// CSV header matching [`TokenDifficultyRecord::csv_row`]:
/// `pos,l_t,khat,ce_0..ce_K`.
pub fn difficulty_csv_header(max_steps: usize) -> String {
    let mut h = String::from("pos,l_t,khat");
    for k in 0..=max_steps {
        h.push_str(&format!(",ce_{k}"));
    }
    h
}

impl TokenDifficultyRecord {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{:.6},{}", self.pos, self.l_t, self.khat);
        for v in &self.ce {
            row.push_str(&format!(",{v:.6}"));
        }
        row
    }
}

/// Probes every token of `data` at full depth: sequential windows as in
/// evaluation, but all K latent slots run so the per-depth CE curve and
/// the step-0 difficulty are both measurable.
pub fn intrinsic_difficulty<F: Real>(
    params: &Parameters<F>,
    config: &ModelConfig,
    ponder: &PonderSettings,
    data: &[u32],
    window_len: usize,
    max_windows: Option<usize>,
) -> Result<Vec<TokenDifficultyRecord>> {
    if data.is_empty() {
        return Err(CoreError::Data(
            "difficulty analysis requires a non-empty token stream".into(),
        ));
    }
    if window_len < 2 {
        return Err(CoreError::Config(
            "difficulty windows need at least 2 tokens (BOS plus one target)".into(),
        ));
    }
    let cap = max_windows.unwrap_or(usize::MAX);
    let windows = WindowSampler::sequential_windows(data, window_len, cap);
    let k_max = ponder.max_steps;
    let mut records = Vec::new();
    for window in &windows {
        let mut session = DecodeSession::new(params, config, ponder)?.with_full_depth();
        for pair in window.windows(2) {
            let probe = session.advance_probed(pair[0])?;
            let h0_logits = lm_logits(
                params,
                &probe.states[0].clone().insert_axis(Axis(0)),
            );
            let l_t = token_nll(&h0_logits.row(0).to_owned(), pair[1])?;
            let latent = LatentStates::new(probe.states)?;
            let ce = (0..=k_max)
                .map(|i| {
                    let integrated = weighted_integration(&probe.dist, &latent, Some(i))?;
                    let logits = lm_logits(params, &integrated.insert_axis(Axis(0)));
                    token_nll(&logits.row(0).to_owned(), pair[1])
                })
                .collect::<Result<Vec<f64>>>()?;
            records.push(TokenDifficultyRecord {
                pos: records.len(),
                l_t,
                khat: probe.rule_khat,
                ce,
            });
        }
    }
    Ok(records)
}

/// Assigns each value to one of `n_buckets` quantile buckets (0 = lowest).
/// Ties are broken by position so the split is deterministic and bucket
/// sizes differ by at most one.
pub fn difficulty_buckets(values: &[f64], n_buckets: usize) -> Result<Vec<usize>> {
    if n_buckets == 0 {
        return Err(CoreError::Config("bucket count must be positive".into()));
    }
    if values.len() < n_buckets {
        return Err(CoreError::Data(format!(
            "{} values cannot fill {} buckets",
            values.len(),
            n_buckets
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric(
            "bucket values must be finite".into(),
        ));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("finite values compare")
            .then(a.cmp(&b))
    });
    let n = values.len();
    let base = n / n_buckets;
    let rem = n % n_buckets;
    let mut assignment = vec![0usize; n];
    let mut rank = 0;
    for bucket in 0..n_buckets {
        let size = base + usize::from(bucket < rem);
        for _ in 0..size {
            assignment[order[rank]] = bucket;
            rank += 1;
        }
    }
    Ok(assignment)
}

/// Human label for bucket `i` of `n_buckets` (easy/medium/hard for the
/// default tertile split).
pub fn bucket_label(bucket: usize, n_buckets: usize) -> String {
    if n_buckets == 3 {
        ["easy", "medium", "hard"][bucket.min(2)].to_string()
    } else {
        format!("bucket_{bucket}")
    }
}

/// Bucket-mean improvement from each additional step.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalUtilityReport {
    pub bucket: String,
    /// Tokens in the bucket.
    pub count: usize,
    /// `delta_ce[i-1]` = mean over the bucket of `ce_{i-1} − ce_i`, for
    /// steps i = 1..K. Negative means the step hurt.
    pub delta_ce: Vec<f64>,
}

/// CSV header matching [`MarginalUtilityReport::csv_rows`]:
/// `bucket,step,delta_ce,count`.
pub fn marginal_csv_header() -> &'static str {
    "bucket,step,delta_ce,count"
}

impl MarginalUtilityReport {
    /// One row per step.
    pub fn csv_rows(&self) -> Vec<String> {
        self.delta_ce
            .iter()
            .enumerate()
            .map(|(i, d)| format!("{},{},{:.6},{}", self.bucket, i + 1, d, self.count))
            .collect()
    }
}

/// Averages the per-step CE improvement within each difficulty bucket.
/// `buckets[t]` assigns record `t`; reports come back in bucket order.
pub fn marginal_utility(
    records: &[TokenDifficultyRecord],
    buckets: &[usize],
    n_buckets: usize,
) -> Result<Vec<MarginalUtilityReport>> {
    if n_buckets == 0 {
        return Err(CoreError::Config("bucket count must be positive".into()));
    }
    if records.len() != buckets.len() {
        return Err(CoreError::Shape(format!(
            "{} records but {} bucket assignments",
            records.len(),
            buckets.len()
        )));
    }
    if let Some(&bad) = buckets.iter().find(|&&b| b >= n_buckets) {
        return Err(CoreError::Shape(format!(
            "bucket id {bad} outside 0..{n_buckets}"
        )));
    }
    let depth = match records.first() {
        Some(r) => r.ce.len(),
        None => return Err(CoreError::Data("no records to aggregate".into())),
    };
    if depth == 0 || records.iter().any(|r| r.ce.len() != depth) {
        return Err(CoreError::Shape(
            "records disagree on the per-depth CE length".into(),
        ));
    }

    let k_max = depth - 1;
    let mut sums = vec![vec![0.0f64; k_max]; n_buckets];
    let mut counts = vec![0usize; n_buckets];
    for (record, &bucket) in records.iter().zip(buckets) {
        counts[bucket] += 1;
        for i in 1..=k_max {
            sums[bucket][i - 1] += record.ce[i - 1] - record.ce[i];
        }
    }
    Ok((0..n_buckets)
        .map(|b| MarginalUtilityReport {
            bucket: bucket_label(b, n_buckets),
            count: counts[b],
            delta_ce: sums[b]
                .iter()
                .map(|s| if counts[b] == 0 { 0.0 } else { s / counts[b] as f64 })
                .collect(),
        })
        .collect())
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (average ranks for ties). Undefined — and
/// rejected — when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::Shape(format!(
            "rank correlation needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(CoreError::Data(
            "rank correlation needs at least 2 observations".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(CoreError::Numeric(
            "rank correlation inputs must be finite".into(),
        ));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(CoreError::Numeric(
            "rank correlation is undefined for constant input".into(),
        ));
    }
    Ok(cov / (va * vb).sqrt())
}
