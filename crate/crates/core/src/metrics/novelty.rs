//! Sequence-level importance ratios and their summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent passed to `exp`; beyond it the ratio is clamped.
pub const EXPONENT_CLAMP: f64 = 700.0;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [2.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeqRatio {
    pub value: f64,
    /// Set when the exponent was clamped to `±EXPONENT_CLAMP`.
    pub overflowed: bool,
}

/// `exp(mean_t(new_t - old_t))`, the per-token geometric-mean likelihood
/// ratio, with the overflow flag.
pub fn seq_importance_ratio_flagged(new_logps: &[f64], old_logps: &[f64]) -> Result<SeqRatio> {
    if new_logps.len() != old_logps.len() {
        return Err(Error::LengthMismatch {
            expected: old_logps.len(),
            actual: new_logps.len(),
        });
    }
    if new_logps.is_empty() {
        return Err(Error::EmptyInput("sequence has no tokens"));
    }
    let diff: f64 = new_logps.iter().sum::<f64>() - old_logps.iter().sum::<f64>();
    let exponent = diff / new_logps.len() as f64;
    let clamped = exponent.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
    Ok(SeqRatio {
        value: clamped.exp(),
        overflowed: clamped != exponent,
    })
}

pub fn seq_importance_ratio(new_logps: &[f64], old_logps: &[f64]) -> Result<f64> {
    seq_importance_ratio_flagged(new_logps, old_logps).map(|r| r.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyStats {
    pub mean: f64,
    /// Lower middle element for even counts.
    pub median: f64,
    pub thresholds: Vec<f64>,
    /// Number of ratios strictly above each threshold.
    pub counts: Vec<usize>,
}

pub fn novelty_stats(ratios: &[f64], thresholds: &[f64]) -> Result<NoveltyStats> {
    if ratios.is_empty() {
        return Err(Error::EmptyInput("no importance ratios"));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let mut sorted = ratios.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    let counts = thresholds
        .iter()
        .map(|&th| ratios.iter().filter(|&&r| r > th).count())
        .collect();
    Ok(NoveltyStats {
        mean,
        median,
        thresholds: thresholds.to_vec(),
        counts,
    })
}
