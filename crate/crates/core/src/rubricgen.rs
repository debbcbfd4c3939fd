//! Prompting an LLM to draft a rubric for a question-answer pair.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::rubric::{Criterion, Rubric, RubricTask, Turn};

const GENERATION_TEMPLATE: &str = include_str!("../templates/rubric_generation_prompt.txt");

pub fn render_rubric_generation_prompt(question: &str, answer: &str) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::ValidationFailure(vec!["question: must not be empty".into()]));
    }
    Ok(GENERATION_TEMPLATE
        .replacen("<<answer>>", answer, 1)
        .replacen("<<question>>", question, 1))
}

/// Extracts `{"rubrics": [{criterion, points}, ...]}` from an LLM reply and
/// validates it. Every offending field is reported, not only the first.
pub fn parse_generated_rubric(raw: &str) -> Result<Rubric> {
    let obj = raw
        .match_indices('{')
        .find_map(|(start, _)| {
            let mut s = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
            match s.next() {
                Some(Ok(v)) if v.get("rubrics").is_some() => Some(v),
                _ => None,
            }
        })
        .ok_or_else(|| Error::ValidationFailure(vec!["rubrics: no JSON object with a `rubrics` field".into()]))?;

    let Some(items) = obj["rubrics"].as_array() else {
        return Err(Error::ValidationFailure(vec!["rubrics: not an array".into()]));
    };
    let mut problems = Vec::new();
    let mut criteria = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let text = item.get("criterion").and_then(Value::as_str);
        let points = item.get("points").and_then(Value::as_f64);
        match text {
            None => problems.push(format!("rubrics[{i}].criterion: missing or not a string")),
            Some(t) if t.trim().is_empty() => problems.push(format!("rubrics[{i}].criterion: empty")),
            _ => {}
        }
        match points {
            None => problems.push(format!("rubrics[{i}].points: missing or not a number")),
            Some(0.0) => problems.push(format!("rubrics[{i}].points: must be nonzero")),
            _ => {}
        }
        if let (Some(t), Some(p)) = (text, points) {
            criteria.push(Criterion::new(format!("c{i}"), t, p));
        }
    }
    if items.is_empty() {
        problems.push("rubrics: empty".into());
    }
    if !problems.is_empty() {
        return Err(Error::ValidationFailure(problems));
    }
    Rubric::new(criteria).map_err(|e| Error::ValidationFailure(vec![e.to_string()]))
}

/// A dataset task asking `question`, graded by `rubric`.
pub fn task_from_generated(task_id: &str, question: &str, rubric: Rubric) -> Result<RubricTask> {
    RubricTask::new(task_id, vec![Turn::user(question)], rubric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_has_landmarks_and_substitutions() {
        let p = render_rubric_generation_prompt("What is 2+2?", "4").unwrap();
        assert!(p.lines().any(|l| l == "# Required Rubric Categories"));
        assert!(p.contains("# Question\n\nWhat is 2+2?\n\n# Answer\n\n4\n"));
        assert!(render_rubric_generation_prompt("  ", "x").is_err());
    }

    #[test]
    fn parses_fenced_reply() {
        let raw = "```json\n{\"rubrics\": [{\"criterion\": \"States 4\", \"points\": 10}, {\"criterion\": \"Off-topic\", \"points\": -10}]}\n```";
        let r = parse_generated_rubric(raw).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.points(), vec![10.0, -10.0]);
    }

    #[test]
    fn reports_every_bad_field() {
        let raw = r#"{"rubrics": [{"criterion": "ok"}, {"points": 3}, {"criterion": "z", "points": 0}]}"#;
        match parse_generated_rubric(raw) {
            Err(Error::ValidationFailure(p)) => {
                assert_eq!(p.len(), 3);
                assert!(p[0].contains("rubrics[0].points"));
                assert!(p[1].contains("rubrics[1].criterion"));
                assert!(p[2].contains("rubrics[2].points"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_penalty_only_rubric() {
        let raw = r#"{"rubrics": [{"criterion": "bad", "points": -3}]}"#;
        assert!(matches!(parse_generated_rubric(raw), Err(Error::ValidationFailure(_))));
    }
}
