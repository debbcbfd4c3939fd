//! First-order tabular softmax token policy.
//!
//! Logits are indexed by (task context, previous token or start marker).
//! Token `0` is the end marker. All log-probabilities and gradients here
//! are exact and refer to the plain policy: temperature 1, no truncation,
//! no guidance bias. Sampling-time adjustments live in [`sampling`].

pub mod checkpoint;
pub mod guidance;
pub mod sampling;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use guidance::GuidanceBias;
pub use sampling::{sample_response, SamplingConfig};

/// End-of-sequence token.
pub const EOS: u32 = 0;

/// A sampled response. When `terminated`, the final token is [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<u32>,
    pub terminated: bool,
}

impl TokenSeq {
    /// Content tokens, end marker excluded.
    pub fn content(&self) -> &[u32] {
        if self.terminated {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Builds a terminated sequence from content tokens.
    pub fn from_content(content: &[u32]) -> Self {
        let mut tokens = content.to_vec();
        tokens.push(EOS);
        Self {
            tokens,
            terminated: true,
        }
    }

    /// Whitespace-separated token ids, the text form used in response files
    /// and judge prompts.
    pub fn to_text(&self) -> String {
        content_to_text(self.content())
    }
}

pub fn content_to_text(content: &[u32]) -> String {
    content
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses the whitespace-separated token text form.
pub fn parse_token_text(text: &str) -> Option<Vec<u32>> {
    text.split_whitespace().map(|w| w.parse().ok()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab_size: usize,
    max_length: usize,
    contexts: usize,
    logits: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(contexts: usize, vocab_size: usize, max_length: usize) -> Self {
        assert!(vocab_size >= 2, "vocabulary needs the end marker plus one token");
        Self {
            vocab_size,
            max_length,
            contexts,
            logits: vec![0.0; contexts * (vocab_size + 1) * vocab_size],
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(
        contexts: usize,
        vocab_size: usize,
        max_length: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut p = Self::zeros(contexts, vocab_size, max_length);
        if scale > 0.0 {
            for l in &mut p.logits {
                *l = rng.gen_range(-scale..=scale);
            }
        }
        p
    }

    pub fn from_raw(
        contexts: usize,
        vocab_size: usize,
        max_length: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::BadCheckpoint(format!("vocab_size {vocab_size} < 2")));
        }
        let expected = contexts * (vocab_size + 1) * vocab_size;
        if logits.len() != expected {
            return Err(Error::BadCheckpoint(format!(
                "logit table has {} entries, expected {expected}",
                logits.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::BadCheckpoint("non-finite logit".into()));
        }
        Ok(Self {
            vocab_size,
            max_length,
            contexts,
            logits,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn raw(&self) -> &[f64] {
        &self.logits
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Offset of the logit row for a state; `prev = None` is the start marker.
    pub fn row_offset(&self, ctx: usize, prev: Option<u32>) -> usize {
        assert!(ctx < self.contexts, "context {ctx} out of range");
        let slot = match prev {
            None => self.vocab_size,
            Some(t) => t as usize,
        };
        (ctx * (self.vocab_size + 1) + slot) * self.vocab_size
    }

    pub fn row(&self, ctx: usize, prev: Option<u32>) -> &[f64] {
        let o = self.row_offset(ctx, prev);
        &self.logits[o..o + self.vocab_size]
    }

    pub fn row_mut(&mut self, ctx: usize, prev: Option<u32>) -> &mut [f64] {
        let o = self.row_offset(ctx, prev);
        let v = self.vocab_size;
        &mut self.logits[o..o + v]
    }

    /// Next-token distribution of the plain policy after `prefix`.
    pub fn next_token_probs(&self, ctx: usize, prefix: &[u32]) -> Vec<f64> {
        softmax(self.row(ctx, prefix.last().copied()))
    }
}

/// States visited while emitting `tokens`: the previous token before each one.
pub(crate) fn states(tokens: &[u32]) -> impl Iterator<Item = (Option<u32>, u32)> + '_ {
    tokens
        .iter()
        .enumerate()
        .map(move |(i, &t)| (if i == 0 { None } else { Some(tokens[i - 1]) }, t))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

/// Per-token log-probabilities of `seq` under the plain policy.
pub fn log_prob(params: &PolicyParams, ctx: usize, seq: &TokenSeq) -> Vec<f64> {
    states(&seq.tokens)
        .map(|(prev, tok)| {
            let row = params.row(ctx, prev);
            row[tok as usize] - log_sum_exp(row)
        })
        .collect()
}

pub fn sequence_log_prob(params: &PolicyParams, ctx: usize, seq: &TokenSeq) -> f64 {
    log_prob(params, ctx, seq).iter().sum()
}

pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Shannon entropy (nats) of the next-token distribution after `prefix`.
pub fn token_entropy(params: &PolicyParams, ctx: usize, prefix: &[u32]) -> f64 {
    entropy_of(&params.next_token_probs(ctx, prefix))
}

/// Mean next-token entropy over every position of every sequence.
pub fn mean_trajectory_entropy(params: &PolicyParams, seqs: &[(usize, &TokenSeq)]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (ctx, seq) in seqs {
        for (prev, _) in states(&seq.tokens) {
            total += entropy_of(&softmax(params.row(*ctx, prev)));
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Dense gradient table with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Self {
            values: vec![0.0; params.logits.len()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Adds `weight(t) * d log pi(o_t | s_t) / d logits` for every position `t`.
pub(crate) fn accumulate_logprob_gradient(
    params: &PolicyParams,
    ctx: usize,
    tokens: &[u32],
    mut weight: impl FnMut(usize) -> f64,
    grad: &mut Gradient,
) {
    for (t, (prev, tok)) in states(tokens).enumerate() {
        let w = weight(t);
        if w == 0.0 {
            continue;
        }
        let off = params.row_offset(ctx, prev);
        let probs = softmax(&params.logits[off..off + params.vocab_size]);
        for (j, p) in probs.iter().enumerate() {
            let onehot = if j == tok as usize { 1.0 } else { 0.0 };
            grad.values[off + j] += w * (onehot - p);
        }
    }
}

/// Gradient of the sequence log-likelihood with respect to every logit:
/// `onehot(token) - softmax(row)` summed over visited states, zero elsewhere.
pub fn logprob_gradient(params: &PolicyParams, ctx: usize, seq: &TokenSeq) -> Gradient {
    let mut g = Gradient::zeros_like(params);
    accumulate_logprob_gradient(params, ctx, &seq.tokens, |_| 1.0, &mut g);
    g
}
