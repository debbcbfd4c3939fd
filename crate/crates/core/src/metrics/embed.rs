//! Text embedders and mean pairwise cosine distance.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grader::{endpoint_url, http_client, truncate, API_KEY_ENV};

pub trait Embedder: Send + Sync {
    /// One unit-norm vector per text (the zero vector for texts with no
    /// features).
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

pub const DEFAULT_HASH_DIM: usize = 256;

/// Deterministic embedder: hashed counts of whitespace unigrams and bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashNgramEmbedder {
    pub dim: usize,
}

impl Default for HashNgramEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_HASH_DIM,
        }
    }
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `std`'s
/// default hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashNgramEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut v = vec![0.0; self.dim];
        let mut bump = |feature: String| {
            v[(fnv1a(feature.as_bytes()) % self.dim as u64) as usize] += 1.0;
        };
        for w in &words {
            bump(format!("1:{w}"));
        }
        for pair in words.windows(2) {
            bump(format!("2:{} {}", pair[0], pair[1]));
        }
        normalize(&mut v);
        v
    }
}

impl Embedder for HashNgramEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "Qwen3-Embedding-0.6B".into(),
            timeout_secs: 60.0,
        }
    }
}

/// Client for an `/embeddings` endpoint returning `data[i].embedding`.
pub struct HttpEmbedder {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(settings: &EmbeddingSettings) -> Result<Self> {
        Ok(Self {
            http: http_client(settings.timeout_secs)?,
            url: endpoint_url(&settings.endpoint, "embeddings"),
            model: settings.model.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let unavailable = |m: String| Error::EmbedderUnavailable(m);
        let body = json!({"model": self.model, "input": texts});
        let mut req = self
            .http
            .post(&self.url)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| unavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(unavailable(format!("{status}: {}", truncate(&text, 200))));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| unavailable(e.to_string()))?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| unavailable("response has no `data` array".into()))?;
        if data.len() != texts.len() {
            return Err(unavailable(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|d| {
                let mut e: Vec<f64> = d["embedding"]
                    .as_array()
                    .ok_or_else(|| unavailable("entry without `embedding`".into()))?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| unavailable("non-numeric embedding".into())))
                    .collect::<Result<_>>()?;
                normalize(&mut e);
                Ok(e)
            })
            .collect()
    }
}

/// `1 - cos(a, b)` for unit vectors. Two empty (zero) vectors count as
/// identical; one empty vector is orthogonal to everything else.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let za = a.iter().all(|&x| x == 0.0);
    let zb = b.iter().all(|&x| x == 0.0);
    match (za, zb) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ if a == b => 0.0,
        _ => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot).clamp(0.0, 2.0)
        }
    }
}

/// Mean cosine distance over unordered pairs of response embeddings.
pub fn semantic_distance(responses: &[String], embedder: &dyn Embedder) -> Result<f64> {
    if responses.len() < 2 {
        return Err(Error::TooFewResponses(responses.len()));
    }
    let vecs = embedder.embed(responses)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            total += cosine_distance(&vecs[i], &vecs[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Vec<Vec<f64>>);
    impl Embedder for Fixed {
        fn embed(&self, _: &[String]) -> Result<Vec<Vec<f64>>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn identical_texts_have_zero_distance() {
        let r = vec!["3 4 5 6".to_string(); 16];
        assert_eq!(semantic_distance(&r, &HashNgramEmbedder::default()).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_embeddings_have_unit_distance() {
        let e = Fixed(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let r = vec!["a".to_string(), "b".to_string()];
        assert_eq!(semantic_distance(&r, &e).unwrap(), 1.0);
    }

    #[test]
    fn hash_embeddings_are_unit_norm_and_stable() {
        let e = HashNgramEmbedder::default();
        let v = e.embed_one("the cat sat on the mat");
        let n: f64 = v.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(v, e.embed_one("the cat sat on the mat"));
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn needs_two_responses() {
        assert!(semantic_distance(&["x".to_string()], &HashNgramEmbedder::default()).is_err());
    }
}
