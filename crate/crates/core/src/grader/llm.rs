//! Chat-completion HTTP client for the LLM judge.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Environment variable holding the bearer credential for judge and
/// embedding endpoints.
pub const API_KEY_ENV: &str = "SCAFFOLD_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    /// Base URL (e.g. `http://localhost:8000/v1`) or the full
    /// `.../chat/completions` URL.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub parallelism: usize,
    /// Initial retry delay; doubles per attempt.
    pub retry_backoff_ms: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1".into(),
            model: "Qwen3-32B".into(),
            timeout_secs: 120.0,
            max_retries: 3,
            parallelism: 8,
            retry_backoff_ms: 500,
        }
    }
}

impl LlmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::BadConfig("parallelism limit must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::BadConfig("request timeout must be positive".into()));
        }
        if self.endpoint.trim().is_empty() || self.model.trim().is_empty() {
            return Err(Error::BadConfig("llm endpoint and model are required".into()));
        }
        Ok(())
    }
}

/// Joins a base URL with an API path unless the URL already ends with it.
pub(crate) fn endpoint_url(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_string()
    } else {
        format!("{base}/{path}")
    }
}

pub(crate) fn http_client(timeout_secs: f64) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(timeout_secs))
        .build()
        .map_err(|e| Error::BadConfig(format!("http client: {e}")))
}

pub struct ChatClient {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl ChatClient {
    pub fn new(settings: &LlmSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            http: http_client(settings.timeout_secs)?,
            url: endpoint_url(&settings.endpoint, "chat/completions"),
            model: settings.model.clone(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        })
    }

    /// Sends one user message at temperature 0 and returns the reply text.
    /// Errors are transport or protocol descriptions, suitable for retry.
    pub fn complete(&self, prompt: &str) -> std::result::Result<String, String> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let mut req = self
            .http
            .post(&self.url)
            .header("content-type", "application/json")
            .body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| format!("request failed: {e}"))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| format!("reading body: {e}"))?;
        if !status.is_success() {
            return Err(format!("endpoint returned {status}: {}", truncate(&text, 200)));
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| format!("response is not JSON: {e}"))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| format!("no choices[0].message.content in {}", truncate(&text, 200)))
    }
}

pub(crate) fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        format!("{}…", s.chars().take(n).collect::<String>())
    }
}
