//! Per-criterion binary grading.
//!
//! Three interchangeable backends: the synthetic oracle (exact checks), a
//! mock that plays back recorded verdicts, and an LLM judge reached over a
//! chat-completion endpoint. [`Grader::grade_rubric`] fans criteria out to
//! a bounded number of worker threads and returns verdicts in rubric order.

mod llm;
mod prompt;
mod transcript;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, PartialJudgments, Result};
use crate::policy::parse_token_text;
use crate::rubric::{Criterion, JudgmentVector, RubricTask};
use crate::synthenv::oracle_check;

pub(crate) use llm::{endpoint_url, http_client, truncate};
pub use llm::{ChatClient, LlmSettings, API_KEY_ENV};
pub use prompt::{
    parse_judgment, render_conversation, render_judge_prompt, render_rubric_item, Judgment,
};
pub use transcript::{prompt_hash, read_transcript, Transcript, TranscriptRecord};

/// A candidate response. Token form is present when the text parses as
/// whitespace-separated token ids, which the oracle requires.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub text: String,
    pub tokens: Option<Vec<u32>>,
}

impl Response {
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = parse_token_text(&text);
        Self { text, tokens }
    }

    pub fn from_tokens(content: &[u32]) -> Self {
        Self {
            text: crate::policy::content_to_text(content),
            tokens: Some(content.to_vec()),
        }
    }
}

/// Recorded verdicts keyed by (task id, criterion id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockTable {
    entries: HashMap<(String, String), bool>,
}

#[derive(Serialize, Deserialize)]
struct MockEntry {
    task_id: String,
    criterion_id: String,
    criteria_met: bool,
}

impl MockTable {
    pub fn insert(&mut self, task_id: &str, criterion_id: &str, met: bool) {
        self.entries
            .insert((task_id.to_string(), criterion_id.to_string()), met);
    }

    pub fn get(&self, task_id: &str, criterion_id: &str) -> Option<bool> {
        self.entries
            .get(&(task_id.to_string(), criterion_id.to_string()))
            .copied()
    }

    /// Reads a JSON array of `{task_id, criterion_id, criteria_met}`.
    pub fn load(path: &Path) -> Result<Self> {
        let entries: Vec<MockEntry> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let mut table = Self::default();
        for e in entries {
            table.insert(&e.task_id, &e.criterion_id, e.criteria_met);
        }
        Ok(table)
    }

    /// Builds a table from the last successful verdict per key in a judge
    /// transcript, for offline re-grading.
    pub fn from_transcript(path: &Path) -> Result<Self> {
        let mut table = Self::default();
        for r in read_transcript(path)? {
            if let Some(j) = r.parsed {
                table.insert(&r.task_id, &r.criterion_id, j.criteria_met);
            }
        }
        Ok(table)
    }
}

pub struct LlmJudge {
    client: ChatClient,
    settings: LlmSettings,
    transcript: Option<Transcript>,
}

impl LlmJudge {
    pub fn new(settings: LlmSettings, transcript: Option<Transcript>) -> Result<Self> {
        Ok(Self {
            client: ChatClient::new(&settings)?,
            settings,
            transcript,
        })
    }

    fn judge(&self, task: &RubricTask, response: &Response, criterion: &Criterion) -> Result<Judgment> {
        let prompt = render_judge_prompt(task, &response.text, criterion);
        let hash = prompt_hash(&prompt);
        let attempts = self.settings.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.settings.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                thread::sleep(Duration::from_millis(backoff));
            }
            let (raw, outcome) = match self.client.complete(&prompt) {
                Ok(raw) => {
                    let parsed = parse_judgment(&raw).and_then(|j| {
                        if j.explanation.trim().is_empty() {
                            Err(Error::ParseFailure("empty explanation".into()))
                        } else {
                            Ok(j)
                        }
                    });
                    (Some(raw), parsed.map_err(|e| e.to_string()))
                }
                Err(e) => (None, Err(e)),
            };
            if let Some(t) = &self.transcript {
                t.append(&TranscriptRecord {
                    prompt_sha256: hash.clone(),
                    task_id: task.task_id.clone(),
                    criterion_id: criterion.id.clone(),
                    attempt,
                    raw_response: raw,
                    parsed: outcome.as_ref().ok().cloned(),
                    error: outcome.as_ref().err().cloned(),
                })?;
            }
            match outcome {
                Ok(j) => return Ok(j),
                Err(e) => last_error = e,
            }
        }
        Err(Error::GradingUnavailable {
            reason: format!(
                "task `{}` criterion `{}`: {attempts} attempt(s) failed, last: {last_error}",
                task.task_id, criterion.id
            ),
            partial: None,
        })
    }
}

pub enum GraderBackend {
    Oracle,
    Mock(MockTable),
    Llm(LlmJudge),
}

impl GraderBackend {
    pub fn kind(&self) -> &'static str {
        match self {
            GraderBackend::Oracle => "oracle",
            GraderBackend::Mock(_) => "mock",
            GraderBackend::Llm(_) => "llm",
        }
    }
}

/// A backend plus its in-flight limit for per-criterion calls.
pub struct Grader {
    backend: GraderBackend,
    parallelism: usize,
}

impl Grader {
    pub fn new(backend: GraderBackend, parallelism: usize) -> Result<Self> {
        if parallelism == 0 {
            return Err(Error::BadConfig("parallelism limit must be at least 1".into()));
        }
        Ok(Self {
            backend,
            parallelism,
        })
    }

    pub fn oracle() -> Self {
        Self {
            backend: GraderBackend::Oracle,
            parallelism: 1,
        }
    }

    pub fn backend(&self) -> &GraderBackend {
        &self.backend
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    pub fn grade_criterion(
        &self,
        task: &RubricTask,
        response: &Response,
        criterion: &Criterion,
    ) -> Result<Judgment> {
        match &self.backend {
            GraderBackend::Oracle => {
                let check = criterion
                    .check
                    .as_ref()
                    .ok_or_else(|| Error::OracleUnsupported(criterion.id.clone()))?;
                let tokens = response.tokens.as_deref().ok_or_else(|| {
                    Error::OracleUnsupported(format!(
                        "{}: response is not a token sequence",
                        criterion.id
                    ))
                })?;
                let met = oracle_check(tokens, check);
                Ok(Judgment {
                    criteria_met: met,
                    explanation: format!(
                        "{} {}",
                        criterion.text,
                        if met { "(met)" } else { "(not met)" }
                    ),
                })
            }
            GraderBackend::Mock(table) => table
                .get(&task.task_id, &criterion.id)
                .map(|met| Judgment {
                    criteria_met: met,
                    explanation: "recorded".into(),
                })
                .ok_or_else(|| Error::GradingUnavailable {
                    reason: format!(
                        "no recorded verdict for task `{}` criterion `{}`",
                        task.task_id, criterion.id
                    ),
                    partial: None,
                }),
            GraderBackend::Llm(judge) => judge.judge(task, response, criterion),
        }
    }

    /// Grades every criterion. Verdicts come back in rubric order regardless
    /// of completion order. On a grading outage the error carries the
    /// verdicts that did complete.
    pub fn grade_rubric(&self, task: &RubricTask, response: &Response) -> Result<JudgmentVector> {
        let criteria = task.rubric.criteria();
        let results = if self.parallelism <= 1 || criteria.len() <= 1 {
            criteria
                .iter()
                .map(|c| self.grade_criterion(task, response, c))
                .collect::<Vec<_>>()
        } else {
            self.grade_concurrently(task, response, criteria)
        };

        let first_err = results.iter().position(Result::is_err);
        match first_err {
            None => {
                let (met, explanations) = results
                    .into_iter()
                    .map(|r| {
                        let j = r.expect("checked ok");
                        (j.criteria_met, j.explanation)
                    })
                    .unzip();
                Ok(JudgmentVector {
                    met,
                    explanations: Some(explanations),
                })
            }
            Some(_) => {
                let partial = PartialJudgments {
                    task_id: task.task_id.clone(),
                    met: results
                        .iter()
                        .map(|r| r.as_ref().ok().map(|j| j.criteria_met))
                        .collect(),
                };
                let err = results
                    .into_iter()
                    .find_map(Result::err)
                    .expect("an error exists");
                Err(match err {
                    Error::GradingUnavailable { reason, .. } => Error::GradingUnavailable {
                        reason,
                        partial: Some(partial),
                    },
                    other => other,
                })
            }
        }
    }

    fn grade_concurrently(
        &self,
        task: &RubricTask,
        response: &Response,
        criteria: &[Criterion],
    ) -> Vec<Result<Judgment>> {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Judgment>>>> =
            Mutex::new((0..criteria.len()).map(|_| None).collect());
        let workers = self.parallelism.min(criteria.len());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= criteria.len() {
                        break;
                    }
                    let r = self.grade_criterion(task, response, &criteria[i]);
                    slots.lock().expect("slot lock poisoned")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("slot lock poisoned")
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rubric::{Rubric, Turn};
    use crate::synthenv::SyntheticCheck;

    fn synth_task() -> RubricTask {
        let rubric = Rubric::new(vec![
            Criterion::new("a", "contains 7", 4.0).with_check(SyntheticCheck::ContainsToken { token: 7 }),
            Criterion::new("b", "uses 3", -2.0).with_check(SyntheticCheck::AvoidToken { token: 3 }),
            Criterion::new("c", "starts with 1", 1.0).with_check(SyntheticCheck::StartsWith { token: 1 }),
        ])
        .unwrap();
        RubricTask::new("t", vec![Turn::user("go")], rubric).unwrap()
    }

    #[test]
    fn oracle_grades_checks() {
        let t = synth_task();
        let g = Grader::oracle();
        let r = Response::from_tokens(&[1, 7, 3]);
        let c = t.rubric.criteria();
        assert!(g.grade_criterion(&t, &r, &c[0]).unwrap().criteria_met);
        // The undesirable behavior occurred, so it is reported as met.
        assert!(g.grade_criterion(&t, &r, &c[1]).unwrap().criteria_met);
        let v = g.grade_rubric(&t, &r).unwrap();
        assert_eq!(v.met, vec![true, true, true]);
    }

    #[test]
    fn oracle_rejects_free_text() {
        let rubric = Rubric::new(vec![Criterion::new("x", "is polite", 1.0)]).unwrap();
        let t = RubricTask::new("t", vec![Turn::user("hi")], rubric).unwrap();
        let err = Grader::oracle()
            .grade_rubric(&t, &Response::from_text("hello"))
            .unwrap_err();
        assert!(matches!(err, Error::OracleUnsupported(_)));
    }

    #[test]
    fn parallelism_does_not_change_verdicts() {
        let t = synth_task();
        let r = Response::from_tokens(&[2, 7]);
        let serial = Grader::new(GraderBackend::Oracle, 1).unwrap().grade_rubric(&t, &r).unwrap();
        let wide = Grader::new(GraderBackend::Oracle, 8).unwrap().grade_rubric(&t, &r).unwrap();
        assert_eq!(serial, wide);
        assert_eq!(serial.met, vec![true, false, false]);
    }

    #[test]
    fn mock_plays_back_and_reports_gaps() {
        let t = synth_task();
        let mut table = MockTable::default();
        table.insert("t", "a", true);
        table.insert("t", "b", false);
        let g = Grader::new(GraderBackend::Mock(table.clone()), 4).unwrap();
        let r = Response::from_text("anything");
        assert!(g.grade_criterion(&t, &r, &t.rubric.criteria()[0]).unwrap().criteria_met);
        match g.grade_rubric(&t, &r) {
            Err(Error::GradingUnavailable {
                partial: Some(p), ..
            }) => assert_eq!(p.met, vec![Some(true), Some(false), None]),
            other => panic!("unexpected {other:?}"),
        }
        table.insert("t", "c", true);
        let g = Grader::new(GraderBackend::Mock(table), 1).unwrap();
        assert_eq!(g.grade_rubric(&t, &r).unwrap().met, vec![true, false, true]);
    }

    #[test]
    fn zero_parallelism_rejected() {
        assert!(Grader::new(GraderBackend::Oracle, 0).is_err());
    }
}
