//! Checklist rubrics and the reward arithmetic built on them.
//!
//! A rubric is an ordered list of criteria, each carrying a signed point
//! weight. A grader marks every criterion met or not met; the score vector
//! is the element-wise product of those marks with the points, and the
//! reward is the score sum divided by the total of the positive points.
//! Negative criteria describe undesirable behavior, so meeting one lowers
//! the reward, possibly below zero.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthenv::SyntheticCheck;

/// One weighted checklist item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: String,
    pub text: String,
    pub points: f64,
    /// Machine-checkable semantics for the oracle grader. `None` marks a
    /// free-text criterion that only an LLM judge can grade.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<SyntheticCheck>,
}

impl Criterion {
    pub fn new(id: impl Into<String>, text: impl Into<String>, points: f64) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            points,
            check: None,
        }
    }

    pub fn with_check(mut self, check: SyntheticCheck) -> Self {
        self.check = Some(check);
        self
    }

    pub fn is_positive(&self) -> bool {
        self.points > 0.0
    }
}

/// An ordered, validated set of criteria. Judgments align with it by
/// position; ids only serve logging and lookups.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Rubric {
    criteria: Vec<Criterion>,
}

impl Rubric {
    pub fn new(criteria: Vec<Criterion>) -> Result<Self> {
        if criteria.is_empty() {
            return Err(Error::RubricInvalid("rubric has no criteria".into()));
        }
        let mut seen = HashSet::with_capacity(criteria.len());
        for c in &criteria {
            if c.text.trim().is_empty() {
                return Err(Error::RubricInvalid(format!(
                    "criterion `{}` has empty text",
                    c.id
                )));
            }
            if !c.points.is_finite() || c.points == 0.0 {
                return Err(Error::RubricInvalid(format!(
                    "criterion `{}` has points {}; points must be finite and nonzero",
                    c.id, c.points
                )));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(Error::RubricInvalid(format!(
                    "duplicate criterion id `{}`",
                    c.id
                )));
            }
        }
        if !criteria.iter().any(Criterion::is_positive) {
            return Err(Error::RubricInvalid(
                "rubric has no positive-point criterion".into(),
            ));
        }
        Ok(Self { criteria })
    }

    pub fn criteria(&self) -> &[Criterion] {
        &self.criteria
    }

    pub fn len(&self) -> usize {
        self.criteria.len()
    }

    pub fn is_empty(&self) -> bool {
        self.criteria.is_empty()
    }

    pub fn points(&self) -> Vec<f64> {
        self.criteria.iter().map(|c| c.points).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.criteria.iter().position(|c| c.id == id)
    }
}

impl<'de> Deserialize<'de> for Rubric {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let criteria = Vec::<Criterion>::deserialize(d)?;
        Rubric::new(criteria).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// An instruction (as a conversation ending in a user turn) with its rubric.
#[derive(Debug, Clone, PartialEq)]
pub struct RubricTask {
    pub task_id: String,
    pub conversation: Vec<Turn>,
    pub rubric: Rubric,
    /// A response known to earn full credit, when one is available
    /// (synthetic tasks always carry one).
    pub witness: Option<Vec<u32>>,
}

impl RubricTask {
    pub fn new(task_id: impl Into<String>, conversation: Vec<Turn>, rubric: Rubric) -> Result<Self> {
        let task_id = task_id.into();
        match conversation.last() {
            None => {
                return Err(Error::RubricInvalid(format!(
                    "task `{task_id}` has an empty conversation"
                )))
            }
            Some(t) if t.role != Role::User => {
                return Err(Error::RubricInvalid(format!(
                    "task `{task_id}`: last conversation turn must be from the user"
                )))
            }
            Some(_) => {}
        }
        Ok(Self {
            task_id,
            conversation,
            rubric,
            witness: None,
        })
    }
}

/// Per-criterion binary marks, aligned with a rubric by position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentVector {
    pub met: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanations: Option<Vec<String>>,
}

impl JudgmentVector {
    pub fn new(met: Vec<bool>) -> Self {
        Self {
            met,
            explanations: None,
        }
    }

    pub fn len(&self) -> usize {
        self.met.len()
    }

    pub fn is_empty(&self) -> bool {
        self.met.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score_vector: Vec<f64>,
    pub total_positive: f64,
    pub reward: f64,
}

/// Sum of the positive point weights: the best achievable raw score.
pub fn positive_total(rubric: &Rubric) -> Result<f64> {
    let total: f64 = rubric
        .criteria()
        .iter()
        .filter(|c| c.points > 0.0)
        .map(|c| c.points)
        .sum();
    if total > 0.0 {
        Ok(total)
    } else {
        Err(Error::RubricInvalid(
            "rubric has no positive-point criterion".into(),
        ))
    }
}

/// `s_i = b_i * p_i`.
pub fn score_vector(judgments: &JudgmentVector, rubric: &Rubric) -> Result<Vec<f64>> {
    if judgments.len() != rubric.len() {
        return Err(Error::LengthMismatch {
            expected: rubric.len(),
            actual: judgments.len(),
        });
    }
    Ok(judgments
        .met
        .iter()
        .zip(rubric.criteria())
        .map(|(&met, c)| if met { c.points } else { 0.0 })
        .collect())
}

/// Score sum divided by the positive total. Never exceeds 1; negative when
/// penalties outweigh earned points.
pub fn normalized_reward(score_vector: &[f64], total_positive: f64) -> Result<f64> {
    if !(total_positive > 0.0) {
        return Err(Error::RubricInvalid(format!(
            "total positive score must be > 0, got {total_positive}"
        )));
    }
    Ok(score_vector.iter().sum::<f64>() / total_positive)
}

/// Full scoring pipeline for one judged response.
pub fn score(judgments: &JudgmentVector, rubric: &Rubric) -> Result<ScoreReport> {
    let score_vector = score_vector(judgments, rubric)?;
    let total_positive = positive_total(rubric)?;
    let reward = normalized_reward(&score_vector, total_positive)?;
    Ok(ScoreReport {
        score_vector,
        total_positive,
        reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rubric(points: &[f64]) -> Rubric {
        Rubric::new(
            points
                .iter()
                .enumerate()
                .map(|(i, &p)| Criterion::new(format!("c{i}"), format!("criterion {i}"), p))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn positive_total_examples() {
        assert_eq!(positive_total(&rubric(&[5.0, 3.0, -2.0])).unwrap(), 8.0);
        assert_eq!(positive_total(&rubric(&[1.0])).unwrap(), 1.0);
        assert_eq!(positive_total(&rubric(&[7.0, -7.0])).unwrap(), 7.0);
    }

    #[test]
    fn score_vector_examples() {
        let r = rubric(&[5.0, 3.0, -2.0]);
        let b = JudgmentVector::new(vec![true, false, true]);
        assert_eq!(score_vector(&b, &r).unwrap(), vec![5.0, 0.0, -2.0]);

        let b = JudgmentVector::new(vec![false; 3]);
        assert_eq!(score_vector(&b, &r).unwrap(), vec![0.0; 3]);

        let r = rubric(&[2.0, -1.0]);
        let b = JudgmentVector::new(vec![true, true]);
        assert_eq!(score_vector(&b, &r).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn score_vector_rejects_misaligned_judgments() {
        let r = rubric(&[5.0, 3.0]);
        let b = JudgmentVector::new(vec![true]);
        assert!(matches!(
            score_vector(&b, &r),
            Err(Error::LengthMismatch { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn normalized_reward_examples() {
        assert_eq!(normalized_reward(&[5.0, 0.0, -2.0], 8.0).unwrap(), 0.375);
        assert_eq!(normalized_reward(&[5.0, 3.0], 8.0).unwrap(), 1.0);
        assert_eq!(normalized_reward(&[0.0, 0.0, -2.0], 8.0).unwrap(), -0.25);
        assert!(matches!(
            normalized_reward(&[1.0], 0.0),
            Err(Error::RubricInvalid(_))
        ));
    }

    #[test]
    fn rubric_structural_invariants() {
        assert!(Rubric::new(vec![]).is_err());
        assert!(Rubric::new(vec![Criterion::new("a", "x", -3.0)]).is_err());
        assert!(Rubric::new(vec![Criterion::new("a", "x", 0.0)]).is_err());
        assert!(Rubric::new(vec![Criterion::new("a", "  ", 1.0)]).is_err());
        assert!(Rubric::new(vec![
            Criterion::new("a", "x", 1.0),
            Criterion::new("a", "y", 2.0)
        ])
        .is_err());
    }

    #[test]
    fn task_requires_trailing_user_turn() {
        let r = rubric(&[1.0]);
        assert!(RubricTask::new("t", vec![], r.clone()).is_err());
        assert!(RubricTask::new(
            "t",
            vec![Turn::user("q"), Turn::assistant("a")],
            r.clone()
        )
        .is_err());
        assert!(RubricTask::new("t", vec![Turn::user("q")], r).is_ok());
    }

    #[test]
    fn full_credit_only_without_penalties() {
        let r = rubric(&[4.0, 2.0, -3.0]);
        let best = score(&JudgmentVector::new(vec![true, true, false]), &r).unwrap();
        assert_eq!(best.reward, 1.0);
        let penalized = score(&JudgmentVector::new(vec![true, true, true]), &r).unwrap();
        assert!(penalized.reward < 1.0);
    }
}
