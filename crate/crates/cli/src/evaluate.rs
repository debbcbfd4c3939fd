//! `grade`, `bon` and `metrics`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scaffold_core::metrics::{
    novelty_stats, self_bleu_diversity, semantic_distance, seq_importance_ratio_flagged, whitespace_tokens,
};
use scaffold_core::policy::{checkpoint, log_prob, parse_token_text};
use scaffold_core::trainer::{best_of_n, eval_seed, task_refs};
use scaffold_core::{score, PolicyParams, Response, RubricTask, TokenSeq, EOS};

use crate::config::{config_err, require_file, BackendKind, RunConfig};

/// One line of a responses file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub task_id: String,
    pub response: String,
}

pub fn read_responses(path: &Path) -> anyhow::Result<Vec<ResponseRecord>> {
    require_file(path, "responses file")?;
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ResponseRecord = serde_json::from_str(line)
            .map_err(|e| config_err(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    if out.is_empty() {
        return Err(config_err(format!("responses file {} is empty", path.display())));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Every response must name a dataset task and every task needs a response.
/// All problems are listed at once.
fn check_alignment(tasks: &[RubricTask], responses: &[ResponseRecord]) -> anyhow::Result<()> {
    let known: HashMap<&str, ()> = tasks.iter().map(|t| (t.task_id.as_str(), ())).collect();
    let answered: HashMap<&str, ()> = responses.iter().map(|r| (r.task_id.as_str(), ())).collect();
    let mut problems: Vec<String> = responses
        .iter()
        .enumerate()
        .filter(|(_, r)| !known.contains_key(r.task_id.as_str()))
        .map(|(i, r)| format!("response {}: unknown task `{}`", i + 1, r.task_id))
        .collect();
    problems.extend(
        tasks
            .iter()
            .filter(|t| !answered.contains_key(t.task_id.as_str()))
            .map(|t| format!("task `{}`: no response", t.task_id)),
    );
    if problems.is_empty() {
        Ok(())
    } else {
        Err(config_err(format!("responses do not align with the dataset: {}", problems.join("; "))))
    }
}

#[derive(Debug, Serialize)]
struct GradeRow<'a> {
    task_id: &'a str,
    response: &'a str,
    met: Vec<bool>,
    score_vector: Vec<f64>,
    total_positive: f64,
    reward: f64,
}

pub fn cmd_grade(cfg: &RunConfig, responses: &Path) -> anyhow::Result<()> {
    cfg.validate_grader()?;
    let tasks = cfg.load_tasks()?;
    let records = read_responses(responses)?;
    check_alignment(&tasks, &records)?;

    let dir = cfg.out_dir("grade");
    cfg.persist(&dir)?;
    let transcript = (cfg.grader.backend == BackendKind::Llm).then(|| dir.join("judge_transcript.jsonl"));
    let grader = cfg.grader(transcript.as_deref())?;
    let by_id: HashMap<&str, &RubricTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();

    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let task = by_id[r.task_id.as_str()];
        let j = grader.grade_rubric(task, &Response::from_text(r.response.clone()))?;
        let report = score(&j, &task.rubric)?;
        rows.push(GradeRow {
            task_id: &r.task_id,
            response: &r.response,
            met: j.met,
            score_vector: report.score_vector,
            total_positive: report.total_positive,
            reward: report.reward,
        });
    }
    let mean = rows.iter().map(|r| r.reward).sum::<f64>() / rows.len() as f64;
    write_jsonl(&dir.join("reports.jsonl"), &rows)?;
    let summary = serde_json::json!({"responses": rows.len(), "tasks": tasks.len(), "mean_reward": mean});
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("mean_reward {mean}");
    println!("run directory {}", dir.display());
    Ok(())
}

fn load_policy(path: &Path, tasks: &[RubricTask]) -> anyhow::Result<PolicyParams> {
    require_file(path, "checkpoint")?;
    let params = checkpoint::load(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if params.contexts() != tasks.len() {
        return Err(config_err(format!(
            "checkpoint {} has {} contexts but the dataset has {} tasks",
            path.display(),
            params.contexts(),
            tasks.len()
        )));
    }
    Ok(params)
}

pub fn cmd_bon(cfg: &RunConfig, checkpoint_path: &Path, n_values: &[usize]) -> anyhow::Result<()> {
    cfg.seed()?;
    cfg.validate_grader()?;
    let tasks = cfg.load_tasks()?;
    let params = load_policy(checkpoint_path, &tasks)?;
    let mut sampling = cfg.train.sampling.clone();
    sampling.max_length = params.max_length();
    sampling.validate()?;

    let dir = cfg.out_dir("bon");
    cfg.persist(&dir)?;
    let transcript = (cfg.grader.backend == BackendKind::Llm).then(|| dir.join("judge_transcript.jsonl"));
    let grader = cfg.grader(transcript.as_deref())?;
    let curve = best_of_n(&params, &task_refs(&tasks), &grader, n_values, &sampling, eval_seed(&cfg.train))?;
    let mut csv = String::from("n,mean_best_reward\n");
    for (n, r) in &curve {
        csv.push_str(&format!("{n},{r}\n"));
    }
    fs::write(dir.join("bon.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct MetricsArgs {
    /// Responses file (JSONL `{task_id, response}`).
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Policy after the update; with `--reference` gives per-response
    /// sequence importance ratios.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Policy before the update.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Precomputed per-token log-probs, JSONL `{new_logps, old_logps}`.
    #[arg(long)]
    pub logprobs: Option<PathBuf>,
    /// Novelty thresholds on the sequence ratio.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2.0, 10.0, 100.0])]
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct LogprobRecord {
    #[serde(default)]
    task_id: Option<String>,
    new_logps: Vec<f64>,
    old_logps: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct RatioRow {
    task_id: String,
    index: usize,
    ratio: f64,
    overflow: bool,
}

/// Token form of a response for a tabular policy; a response that fills the
/// length budget carries no end marker.
fn response_seq(r: &ResponseRecord, params: &PolicyParams) -> anyhow::Result<TokenSeq> {
    let content = parse_token_text(&r.response)
        .ok_or_else(|| config_err(format!("task `{}`: response is not token ids", r.task_id)))?;
    if content.len() > params.max_length()
        || content.iter().any(|&t| t == EOS || t as usize >= params.vocab_size())
    {
        return Err(config_err(format!(
            "task `{}`: response does not fit the policy (vocab {}, max length {})",
            r.task_id,
            params.vocab_size(),
            params.max_length()
        )));
    }
    if content.len() == params.max_length() {
        Ok(TokenSeq {
            tokens: content,
            terminated: false,
        })
    } else {
        Ok(TokenSeq::from_content(&content))
    }
}

/// Task id with new and old per-token log-probs.
type LogprobPair = (String, Vec<f64>, Vec<f64>);

fn ratio_rows(cfg: &RunConfig, args: &MetricsArgs) -> anyhow::Result<Option<Vec<LogprobPair>>> {
    match (&args.checkpoint, &args.reference, &args.logprobs) {
        (None, None, None) => Ok(None),
        (Some(_), Some(_), Some(_)) => Err(config_err("use either checkpoints or --logprobs, not both")),
        (Some(new), Some(old), None) => {
            let responses = args
                .responses
                .as_ref()
                .ok_or_else(|| config_err("checkpoint ratios need --responses"))?;
            let tasks = cfg.load_tasks()?;
            let new = load_policy(new, &tasks)?;
            let old = load_policy(old, &tasks)?;
            let ctx: HashMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.task_id.as_str(), i)).collect();
            let mut rows = Vec::new();
            for r in read_responses(responses)? {
                let c = *ctx
                    .get(r.task_id.as_str())
                    .ok_or_else(|| config_err(format!("unknown task `{}`", r.task_id)))?;
                let seq = response_seq(&r, &new)?;
                rows.push((r.task_id.clone(), log_prob(&new, c, &seq), log_prob(&old, c, &seq)));
            }
            Ok(Some(rows))
        }
        (None, None, Some(path)) => {
            require_file(path, "log-prob file")?;
            let mut rows = Vec::new();
            for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: LogprobRecord = serde_json::from_str(line)
                    .map_err(|e| config_err(format!("{} line {}: {e}", path.display(), i + 1)))?;
                rows.push((r.task_id.unwrap_or_default(), r.new_logps, r.old_logps));
            }
            Ok(Some(rows))
        }
        _ => Err(config_err("--checkpoint and --reference go together")),
    }
}

pub fn cmd_metrics(cfg: &RunConfig, args: &MetricsArgs) -> anyhow::Result<()> {
    let ratios = ratio_rows(cfg, args)?;
    let diversity_input = args.responses.as_deref().map(read_responses).transpose()?;
    if diversity_input.is_none() && ratios.is_none() {
        return Err(config_err("nothing to measure: pass --responses and/or ratio inputs"));
    }
    let dir = cfg.out_dir("metrics");
    cfg.persist(&dir)?;

    if let Some(records) = diversity_input {
        let embedder = cfg.embedder()?;
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in records {
            groups.entry(r.task_id).or_default().push(r.response);
        }
        let mut csv = String::from("task_id,responses,one_minus_self_bleu,semantic_distance\n");
        let (mut bleu_sum, mut sem_sum, mut n) = (0.0, 0.0, 0usize);
        for (task_id, texts) in &groups {
            if texts.len() < 2 {
                csv.push_str(&format!("{task_id},{},,\n", texts.len()));
                continue;
            }
            let tokens: Vec<Vec<String>> = texts.iter().map(|t| whitespace_tokens(t)).collect();
            let bleu = self_bleu_diversity(&tokens)?;
            let sem = semantic_distance(texts, embedder.as_ref())?;
            csv.push_str(&format!("{task_id},{},{bleu},{sem}\n", texts.len()));
            bleu_sum += bleu;
            sem_sum += sem;
            n += 1;
        }
        if n > 0 {
            fs::write(dir.join("diversity.csv"), &csv)?;
            println!("one_minus_self_bleu {}", bleu_sum / n as f64);
            println!("semantic_distance {}", sem_sum / n as f64);
        } else if ratios.is_none() {
            return Err(config_err("diversity needs at least 2 responses for some task"));
        }
    }

    if let Some(rows) = ratios {
        let mut out = Vec::with_capacity(rows.len());
        let mut counters: HashMap<String, usize> = HashMap::new();
        for (task_id, new, old) in rows {
            let r = seq_importance_ratio_flagged(&new, &old)?;
            let index = counters.entry(task_id.clone()).or_default();
            out.push(RatioRow {
                task_id,
                index: *index,
                ratio: r.value,
                overflow: r.overflowed,
            });
            *index += 1;
        }
        let mut csv = String::from("task_id,index,ratio,overflow\n");
        for r in &out {
            csv.push_str(&format!("{},{},{},{}\n", r.task_id, r.index, r.ratio, r.overflow));
        }
        fs::write(dir.join("ratios.csv"), csv)?;
        let values: Vec<f64> = out.iter().map(|r| r.ratio).collect();
        let stats = novelty_stats(&values, &args.thresholds)?;
        fs::write(dir.join("novelty.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
        println!("ratio_mean {}", stats.mean);
        println!("ratio_median {}", stats.median);
        for (th, c) in stats.thresholds.iter().zip(&stats.counts) {
            println!("ratio_above_{th} {c}");
        }
    }
    println!("run directory {}", dir.display());
    Ok(())
}
