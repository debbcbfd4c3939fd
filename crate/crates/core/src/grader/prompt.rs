//! Judge prompt rendering and judgment parsing.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rubric::{Criterion, RubricTask, Turn};

const JUDGE_TEMPLATE: &str = include_str!("../../templates/judge_prompt.txt");

/// One judge verdict for one criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub criteria_met: bool,
    pub explanation: String,
}

/// Conversation lines as `role: content`, separated by blank lines.
pub fn render_conversation(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", t.role.as_str(), t.content))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// `[points] text`.
pub fn render_rubric_item(criterion: &Criterion) -> String {
    format!("[{}] {}", criterion.points, criterion.text)
}

/// Fills the judge template with the task conversation, the candidate
/// response appended as the final assistant turn, and the rubric item.
pub fn render_judge_prompt(task: &RubricTask, response: &str, criterion: &Criterion) -> String {
    let mut turns = task.conversation.clone();
    turns.push(Turn::assistant(response));
    // Slot order matters: the conversation may itself contain the literal
    // rubric slot marker, so fill the rubric item first.
    JUDGE_TEMPLATE
        .replacen("<<rubric_item>>", &render_rubric_item(criterion), 1)
        .replacen("<<conversation>>", &render_conversation(&turns), 1)
}

/// Finds the first JSON object in `raw` (bare or inside a fenced block)
/// that has a string `explanation` and a `criteria_met` field.
pub fn parse_judgment(raw: &str) -> Result<Judgment> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        let Some(Ok(Value::Object(obj))) = stream.next() else {
            continue;
        };
        let Some(met) = obj.get("criteria_met") else {
            continue;
        };
        let Some(explanation) = obj.get("explanation").and_then(Value::as_str) else {
            continue;
        };
        let Some(criteria_met) = met.as_bool() else {
            return Err(Error::TypeMismatch(format!(
                "criteria_met is {met}, expected a boolean"
            )));
        };
        return Ok(Judgment {
            criteria_met,
            explanation: explanation.to_string(),
        });
    }
    let preview: String = raw.chars().take(120).collect();
    Err(Error::ParseFailure(preview))
}
