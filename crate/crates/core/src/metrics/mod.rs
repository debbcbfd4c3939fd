//! Novelty and diversity diagnostics.

mod bleu;
mod embed;
mod novelty;

use serde::{Deserialize, Serialize};

pub use bleu::{self_bleu, self_bleu_diversity, sentence_bleu, whitespace_tokens, MAX_ORDER};
pub use embed::{
    cosine_distance, semantic_distance, EmbeddingSettings, Embedder, HashNgramEmbedder,
    HttpEmbedder, DEFAULT_HASH_DIM,
};
pub use novelty::{
    novelty_stats, seq_importance_ratio, seq_importance_ratio_flagged, NoveltyStats, SeqRatio,
    DEFAULT_THRESHOLDS, EXPONENT_CLAMP,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub one_minus_self_bleu: f64,
    pub mean_semantic_distance: f64,
}

/// Both diversity metrics for one set of responses to the same task.
pub fn diversity_report(
    token_responses: &[Vec<u32>],
    texts: &[String],
    embedder: &dyn Embedder,
) -> crate::Result<DiversityReport> {
    Ok(DiversityReport {
        one_minus_self_bleu: self_bleu_diversity(token_responses)?,
        mean_semantic_distance: semantic_distance(texts, embedder)?,
    })
}
