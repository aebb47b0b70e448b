//! Per-token-type pondering statistics.
//!
//! Groups decode records by the token that was being processed (not the
//! token being predicted) and reports how much computation each token type
//! received: occurrence count, average executed steps, the fraction whose
//! depth was pruned below the budget, and the full histogram over K̂.

use std::collections::BTreeMap;

use crate::decode::DecodeRecord;
use crate::error::{CoreError, Result};
use crate::tokenizer::{describe, TOKEN_BOS};

/// Aggregate pondering behavior of one token type.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStepStats {
    pub token: u32,
    pub count: u64,
    /// Mean executed steps when processing this token.
    pub avg_steps: f64,
    /// Percentage of occurrences with K̂ < K, `100·(1 − hist[K]/count)`.
    pub pruned_pct: f64,
    /// `histogram[k]` = occurrences executing exactly k steps; sums to
    /// `count`.
    pub histogram: Vec<u64>,
}

/// Reconstructs `(consumed token, executed steps)` pairs from a record
/// stream. A record logs the *predicted* token, so the consumed token is
/// the previous record's prediction — or BOS at wall position 0. Records
/// whose predecessor is absent (e.g. the first record after a silent
/// prompt) are skipped.
pub fn consumed_pairs(records: &[DecodeRecord]) -> Vec<(u32, usize)> {
    let mut pairs = Vec::with_capacity(records.len());
    let mut prev: Option<&DecodeRecord> = None;
    for record in records {
        if record.pos == 0 {
            pairs.push((TOKEN_BOS, record.khat));
        } else if let Some(p) = prev {
            if p.pos + 1 == record.pos {
                pairs.push((p.token_id, record.khat));
            }
        }
        prev = Some(record);
    }
    pairs
}

/// Aggregates `(token, executed steps)` pairs into per-token-type stats,
/// sorted by descending count (ties by token id).
pub fn token_step_stats(pairs: &[(u32, usize)], max_steps: usize) -> Result<Vec<TokenStepStats>> {
    let mut groups: BTreeMap<u32, (u64, u64, Vec<u64>)> = BTreeMap::new();
    for &(token, khat) in pairs {
        if khat > max_steps {
            return Err(CoreError::Data(format!(
                "executed steps {khat} exceed the budget of {max_steps}"
            )));
        }
        let entry = groups
            .entry(token)
            .or_insert_with(|| (0, 0, vec![0; max_steps + 1]));
        entry.0 += 1;
        entry.1 += khat as u64;
        entry.2[khat] += 1;
    }
    let mut stats: Vec<TokenStepStats> = groups
        .into_iter()
        .map(|(token, (count, step_sum, histogram))| TokenStepStats {
            token,
            count,
            avg_steps: step_sum as f64 / count as f64,
            pruned_pct: 100.0 * (1.0 - histogram[max_steps] as f64 / count as f64),
            histogram,
        })
        .collect();
    stats.sort_by(|a, b| b.count.cmp(&a.count).then(a.token.cmp(&b.token)));
    Ok(stats)
}

/// CSV header matching [`TokenStepStats::csv_row`]:
/// `token,count,avg_step,pruned_pct,hist_0..hist_K`.
pub fn token_stats_csv_header(max_steps: usize) -> String {
    let mut h = String::from("token,count,avg_step,pruned_pct");
    for k in 0..=max_steps {
        h.push_str(&format!(",hist_{k}"));
    }
    h
}

impl TokenStepStats {
    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{:.3},{:.2}",
            describe(self.token),
            self.count,
            self.avg_steps,
            self.pruned_pct
        );
        for h in &self.histogram {
            row.push_str(&format!(",{h}"));
        }
        row
    }
}
