//! `gen-data` and `rubric-prompt`.

use std::fs;

use scaffold_core::dataset::{write_dataset, TaskRecord};
use scaffold_core::grader::ChatClient;
use scaffold_core::policy::content_to_text;
use scaffold_core::rubricgen::{parse_generated_rubric, render_rubric_generation_prompt, task_from_generated};
use scaffold_core::synthenv::generate_tasks;
use scaffold_core::SynthTaskSpec;

use crate::config::RunConfig;
use crate::evaluate::{write_jsonl, ResponseRecord};
use crate::BackendError;

#[derive(Debug, Clone, Default, clap::Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub max_length: Option<usize>,
    #[arg(long)]
    pub min_criteria: Option<usize>,
    #[arg(long)]
    pub max_criteria: Option<usize>,
    /// Probability that a criterion carries negative points.
    #[arg(long)]
    pub negative_fraction: Option<f64>,
}

/// Writes a synthetic suite plus one witness response per task.
pub fn cmd_gen_data(cfg: &RunConfig, args: &GenDataArgs) -> anyhow::Result<()> {
    let base = cfg.synthetic.clone().unwrap_or_default();
    let spec = SynthTaskSpec {
        seed: cfg.seed()?,
        task_count: args.tasks.unwrap_or(base.task_count),
        vocab_size: args.vocab_size.unwrap_or(base.vocab_size),
        max_length: args.max_length.unwrap_or(base.max_length),
        min_criteria: args.min_criteria.unwrap_or(base.min_criteria),
        max_criteria: args.max_criteria.unwrap_or(base.max_criteria),
        negative_fraction: args.negative_fraction.unwrap_or(base.negative_fraction),
        ..base
    };
    spec.validate()?;
    let tasks = generate_tasks(&spec)?;

    let dir = cfg.out_dir("gen-data");
    let resolved = RunConfig {
        synthetic: Some(spec),
        ..cfg.clone()
    };
    resolved.persist(&dir)?;
    write_dataset(&dir.join("dataset.jsonl"), &tasks)?;
    let witnesses: Vec<ResponseRecord> = tasks
        .iter()
        .filter_map(|t| {
            t.witness.as_ref().map(|w| ResponseRecord {
                task_id: t.task_id.clone(),
                response: content_to_text(w),
            })
        })
        .collect();
    write_jsonl(&dir.join("witnesses.jsonl"), &witnesses)?;
    println!("tasks {}", tasks.len());
    println!("run directory {}", dir.display());
    Ok(())
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct RubricPromptArgs {
    #[arg(long)]
    pub question: String,
    /// Reference answer.
    #[arg(long, default_value = "")]
    pub answer: String,
    /// Send the prompt to the LLM endpoint and store the validated rubric.
    #[arg(long)]
    pub submit: bool,
    #[arg(long, default_value = "generated-0")]
    pub task_id: String,
}

pub fn cmd_rubric_prompt(cfg: &RunConfig, args: &RubricPromptArgs) -> anyhow::Result<()> {
    let prompt = render_rubric_generation_prompt(&args.question, &args.answer)?;
    if !args.submit {
        print!("{prompt}");
        return Ok(());
    }
    let client = ChatClient::new(&cfg.grader.llm)?;
    let reply = client.complete(&prompt).map_err(BackendError)?;
    let dir = cfg.out_dir("rubric-prompt");
    cfg.persist(&dir)?;
    fs::write(dir.join("prompt.txt"), &prompt)?;
    fs::write(dir.join("reply.txt"), &reply)?;
    let rubric = parse_generated_rubric(&reply)?;
    let task = task_from_generated(&args.task_id, &args.question, rubric)?;
    let line = serde_json::to_string(&TaskRecord::from(&task))?;
    fs::write(dir.join("task.jsonl"), format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}
