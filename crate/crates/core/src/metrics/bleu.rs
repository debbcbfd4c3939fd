//! Sentence BLEU and Self-BLEU diversity.
//!
//! Conventions: n-gram orders 1..=4 with uniform weights, truncated to the
//! hypothesis length for short hypotheses; counts clipped by the maximum
//! count in any single reference; a zero match count at order >= 2 is
//! replaced by add-one smoothing `1 / (total + 1)`, while zero unigram
//! matches give BLEU 0; brevity penalty against the closest reference
//! length (ties go to the shorter one).

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn sentence_bleu<T: Eq + Hash>(hypothesis: &[T], references: &[&[T]]) -> f64 {
    let c = hypothesis.len();
    if c == 0 || references.is_empty() {
        return 0.0;
    }
    let orders = MAX_ORDER.min(c);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let hyp = ngram_counts(hypothesis, n);
        let total: usize = hyp.values().sum();
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, k) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let matches: usize = hyp
            .iter()
            .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("references nonempty");
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_sum / orders as f64).exp()
}

/// Mean BLEU of each response against all the others.
pub fn self_bleu<T: Eq + Hash>(responses: &[Vec<T>]) -> Result<f64> {
    if responses.len() < 2 {
        return Err(Error::TooFewResponses(responses.len()));
    }
    let total: f64 = (0..responses.len())
        .map(|i| {
            let refs: Vec<&[T]> = responses
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r.as_slice())
                .collect();
            sentence_bleu(&responses[i], &refs)
        })
        .sum();
    Ok(total / responses.len() as f64)
}

/// `1 - Self-BLEU`.
pub fn self_bleu_diversity<T: Eq + Hash>(responses: &[Vec<T>]) -> Result<f64> {
    Ok(1.0 - self_bleu(responses)?)
}

/// Whitespace tokenization for free-text responses.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_responses_have_zero_diversity() {
        let r = vec![vec![1u32, 2, 3, 4, 5, 6]; 16];
        assert_eq!(self_bleu_diversity(&r).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_responses_are_fully_diverse() {
        let r: Vec<Vec<u32>> = (0..4).map(|i| (0..5).map(|j| i * 100 + j).collect()).collect();
        assert_eq!(self_bleu_diversity(&r).unwrap(), 1.0);
    }

    #[test]
    fn short_hypothesis_uses_available_orders() {
        let hyp = [1u32, 2];
        let refs: [&[u32]; 1] = [&[1, 2]];
        assert!((sentence_bleu(&hyp, &refs) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn brevity_penalty_applies() {
        let hyp = [1u32, 2, 3, 4];
        let refs: [&[u32]; 1] = [&[1, 2, 3, 4, 5, 6, 7, 8]];
        let b = sentence_bleu(&hyp, &refs);
        assert!((b - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn needs_two_responses() {
        assert!(matches!(
            self_bleu_diversity(&[vec![1u32]]),
            Err(Error::TooFewResponses(1))
        ));
    }
}
