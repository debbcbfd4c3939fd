//! Rubric dataset files.
//!
//! One JSON task record per line (JSON Lines). A file whose first
//! non-whitespace character is `[` is read as a single JSON array of the
//! same records. The normative schema lives in `docs/dataset-schema.md`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rubric::{Criterion, Rubric, RubricTask, Turn};
use crate::synthenv::SyntheticCheck;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub conversation: Vec<Turn>,
    pub rubrics: Vec<CriterionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionRecord {
    /// Defaults to `c{position}` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub criterion: String,
    pub points: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<SyntheticCheck>,
}

impl TaskRecord {
    pub fn into_task(self) -> Result<RubricTask> {
        let criteria = self
            .rubrics
            .into_iter()
            .enumerate()
            .map(|(i, r)| Criterion {
                id: r.id.unwrap_or_else(|| format!("c{i}")),
                text: r.criterion,
                points: r.points,
                check: r.check,
            })
            .collect();
        let rubric = Rubric::new(criteria)
            .map_err(|e| Error::RubricInvalid(format!("task `{}`: {e}", self.task_id)))?;
        let mut task = RubricTask::new(self.task_id, self.conversation, rubric)?;
        task.witness = self.witness;
        Ok(task)
    }
}

impl From<&RubricTask> for TaskRecord {
    fn from(task: &RubricTask) -> Self {
        Self {
            task_id: task.task_id.clone(),
            conversation: task.conversation.clone(),
            rubrics: task
                .rubric
                .criteria()
                .iter()
                .map(|c| CriterionRecord {
                    id: Some(c.id.clone()),
                    criterion: c.text.clone(),
                    points: c.points,
                    check: c.check,
                })
                .collect(),
            witness: task.witness.clone(),
        }
    }
}

pub fn parse_dataset(text: &str) -> Result<Vec<RubricTask>> {
    let records: Vec<TaskRecord> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text)?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str(l).map_err(|e| {
                    Error::RubricInvalid(format!("dataset line {}: {e}", n + 1))
                })
            })
            .collect::<Result<_>>()?
    };
    let tasks = records
        .into_iter()
        .map(TaskRecord::into_task)
        .collect::<Result<Vec<_>>>()?;
    let mut ids = std::collections::HashSet::new();
    for t in &tasks {
        if !ids.insert(t.task_id.as_str()) {
            return Err(Error::RubricInvalid(format!(
                "duplicate task id `{}`",
                t.task_id
            )));
        }
    }
    Ok(tasks)
}

pub fn load_dataset(path: &Path) -> Result<Vec<RubricTask>> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn write_dataset(path: &Path, tasks: &[RubricTask]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for task in tasks {
        serde_json::to_writer(&mut out, &TaskRecord::from(task))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{"task_id":"t0","conversation":[{"role":"user","content":"What's the capital of France?"}],"rubrics":[{"criterion":"States that the capital is Paris","points":5},{"criterion":"fails to give the user accurate information","points":-5}]}
{"task_id":"t1","conversation":[{"role":"user","content":"emit tokens"}],"rubrics":[{"id":"k","criterion":"The response contains token 7","points":3,"check":{"kind":"contains_token","token":7}}],"witness":[7]}
"#;

    #[test]
    fn parses_jsonl_and_fills_default_ids() {
        let tasks = parse_dataset(SAMPLE).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].rubric.criteria()[1].id, "c1");
        assert_eq!(tasks[0].rubric.criteria()[1].points, -5.0);
        assert_eq!(
            tasks[1].rubric.criteria()[0].check,
            Some(SyntheticCheck::ContainsToken { token: 7 })
        );
        assert_eq!(tasks[1].witness.as_deref(), Some(&[7u32][..]));
    }

    #[test]
    fn parses_json_array_form() {
        let arr = format!(
            "[{}]",
            SAMPLE.lines().collect::<Vec<_>>().join(",")
        );
        assert_eq!(parse_dataset(&arr).unwrap().len(), 2);
    }

    #[test]
    fn rejects_negative_only_rubric() {
        let bad = r#"{"task_id":"t","conversation":[{"role":"user","content":"q"}],"rubrics":[{"criterion":"bad","points":-1}]}"#;
        assert!(matches!(parse_dataset(bad), Err(Error::RubricInvalid(_))));
    }

    #[test]
    fn rejects_duplicate_task_ids() {
        let line = SAMPLE.lines().next().unwrap();
        let dup = format!("{line}\n{line}\n");
        assert!(parse_dataset(&dup).is_err());
    }

    #[test]
    fn write_then_load_preserves_tasks() {
        let tasks = parse_dataset(SAMPLE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &tasks).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), tasks);
    }
}
