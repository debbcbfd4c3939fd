//! Autoregressive sampling with temperature, top-k and top-p truncation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{GuidanceBias, PolicyParams, TokenSeq, EOS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub max_length: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.8,
            top_k: 20,
            max_length: 16,
        }
    }
}

impl SamplingConfig {
    /// Plain ancestral sampling: no truncation, temperature 1.
    pub fn untruncated(vocab_size: usize, max_length: usize) -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            top_k: vocab_size,
            max_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::BadConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::BadConfig(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.top_k == 0 {
            return Err(Error::BadConfig("top_k must be positive".into()));
        }
        if self.max_length == 0 {
            return Err(Error::BadConfig("max_length must be positive".into()));
        }
        Ok(())
    }
}

/// Sampling distribution for one step: temperature, then top-k, then
/// top-p, then renormalization. Ties in probability keep the lower token
/// id first. `+inf` logits are handled as a forced choice among them.
pub fn truncated_distribution(logits: &[f64], cfg: &SamplingConfig) -> Vec<f64> {
    let v = logits.len();
    let mut probs = vec![0.0; v];
    let forced: Vec<usize> = (0..v).filter(|&i| logits[i] == f64::INFINITY).collect();
    if !forced.is_empty() {
        let p = 1.0 / forced.len() as f64;
        for i in forced {
            probs[i] = p;
        }
        return probs;
    }

    let scaled: Vec<f64> = logits.iter().map(|l| l / cfg.temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (p, s) in probs.iter_mut().zip(&scaled) {
        *p = (s - max).exp();
    }
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);

    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));

    let k = cfg.top_k.min(v);
    let mut kept = Vec::with_capacity(k);
    let mut mass = 0.0;
    let top_k_mass: f64 = order[..k].iter().map(|&i| probs[i]).sum();
    for &i in &order[..k] {
        kept.push(i);
        mass += probs[i] / top_k_mass;
        if mass >= cfg.top_p {
            break;
        }
    }

    let mut out = vec![0.0; v];
    let kept_mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    for i in kept {
        out[i] = probs[i] / kept_mass;
    }
    out
}

/// Inverse-CDF draw.
pub fn draw(probs: &[f64], rng: &mut impl Rng) -> u32 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i as u32;
        }
    }
    last as u32
}

/// Samples one response. The bias shapes the draw but leaves no trace in
/// the returned sequence.
pub fn sample_response(
    params: &PolicyParams,
    ctx: usize,
    bias: &GuidanceBias,
    cfg: &SamplingConfig,
    rng: &mut impl Rng,
) -> TokenSeq {
    let max_len = cfg.max_length.min(params.max_length());
    let mut tokens = Vec::with_capacity(max_len);
    let mut logits = vec![0.0; params.vocab_size()];
    while tokens.len() < max_len {
        logits.copy_from_slice(params.row(ctx, tokens.last().copied()));
        bias.apply(&tokens, &mut logits);
        let tok = draw(&truncated_distribution(&logits, cfg), rng);
        tokens.push(tok);
        if tok == EOS {
            return TokenSeq {
                tokens,
                terminated: true,
            };
        }
    }
    TokenSeq {
        tokens,
        terminated: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::softmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(t: f64, p: f64, k: usize) -> SamplingConfig {
        SamplingConfig {
            temperature: t,
            top_p: p,
            top_k: k,
            max_length: 16,
        }
    }

    #[test]
    fn truncation_order_and_ties() {
        let logits = [0.0, 0.0, 0.0, 0.0];
        // Uniform, top-k 2 keeps the two lowest ids.
        assert_eq!(
            truncated_distribution(&logits, &cfg(1.0, 1.0, 2)),
            vec![0.5, 0.5, 0.0, 0.0]
        );
        // top-p 0.5 over uniform top-4: first two tokens reach 0.5.
        assert_eq!(
            truncated_distribution(&logits, &cfg(1.0, 0.5, 4)),
            vec![0.5, 0.5, 0.0, 0.0]
        );
        let logits = [3.0, 0.0, 1.0, 2.0];
        let d = truncated_distribution(&logits, &cfg(1.0, 0.01, 4));
        assert_eq!(d, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn untruncated_matches_softmax() {
        let logits = [0.3, -1.0, 2.0, 0.7];
        let d = truncated_distribution(&logits, &cfg(1.0, 1.0, 4));
        for (a, b) in d.iter().zip(softmax(&logits)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn greedy_limit_is_argmax_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PolicyParams::random(1, 8, 6, 1.0, &mut rng);
        p.row_mut(0, None).iter_mut().for_each(|l| *l = 0.0);
        p.row_mut(0, None)[3] = 1.0;
        let seq = sample_response(&p, 0, &GuidanceBias::none(), &cfg(1e-9, 1.0, 8), &mut rng);
        let mut prev = None;
        for &tok in &seq.tokens {
            let row = p.row(0, prev);
            let argmax = (0..8).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(tok as usize, argmax);
            prev = Some(tok);
        }
    }

    #[test]
    fn infinite_bias_forces_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PolicyParams::random(1, 8, 10, 1.0, &mut rng);
        let mut offsets = vec![0.0; 8];
        offsets[5] = f64::INFINITY;
        let seq = sample_response(&p, 0, &GuidanceBias::fixed(offsets), &cfg(0.7, 0.8, 3), &mut rng);
        assert_eq!(seq.tokens, vec![5; 10]);
        assert!(!seq.terminated);
    }

    #[test]
    fn seeded_sampling_replays() {
        let p = PolicyParams::random(2, 16, 12, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            (0..20)
                .map(|_| sample_response(&p, 1, &GuidanceBias::none(), &SamplingConfig::default(), &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = PolicyParams::random(1, 8, 1, 1.5, &mut rng);
        p.row_mut(0, None)[0] = -50.0;
        let probs = softmax(p.row(0, None));
        let c = SamplingConfig::untruncated(8, 1);
        let n = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let s = sample_response(&p, 0, &GuidanceBias::none(), &c, &mut rng);
            counts[s.tokens[0] as usize] += 1;
        }
        for j in 0..8 {
            let freq = counts[j] as f64 / n as f64;
            let se = (probs[j] * (1.0 - probs[j]) / n as f64).sqrt();
            assert!(
                (freq - probs[j]).abs() <= 3.0 * se.max(1e-12),
                "token {j}: freq {freq} vs p {}",
                probs[j]
            );
        }
    }

    #[test]
    fn config_validation() {
        assert!(SamplingConfig::default().validate().is_ok());
        assert!(cfg(0.0, 1.0, 3).validate().is_err());
        assert!(cfg(1.0, 0.0, 3).validate().is_err());
        assert!(cfg(1.0, 1.2, 3).validate().is_err());
        assert!(cfg(1.0, 1.0, 0).validate().is_err());
    }
}
