//! Grouped scaffolded rollouts, rubric rewards and clipped policy updates.

mod advantage;
mod config;
mod grpo;
mod rollout;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grader::Grader;
use crate::metrics::{diversity_report, HashNgramEmbedder};
use crate::policy::{mean_trajectory_entropy, PolicyParams, TokenSeq};
use crate::rubric::RubricTask;
use crate::scaffold::step_ratio;

pub use advantage::compute_advantages;
pub use config::{OptimizerKind, TrainConfig};
pub use grpo::{grpo_step, objective, ObjectiveValue, Optimizer, RolloutGroup, RolloutSample, StepStats};
pub use rollout::{best_of_n, evaluate, rollout_phase, task_refs, RolloutOutcome, TaskRef};

use rollout::{keyed_rng, plain_samples, stream};

/// Telemetry for one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Progress used for this step's rollouts.
    pub t: f64,
    pub lambda_step: f64,
    /// Mean reward of the (scaffolded) rollouts.
    pub mean_reward: f64,
    /// Unscaffolded evaluation reward before this step's update.
    pub eval_reward: Option<f64>,
    /// Mean next-token entropy of the rollout snapshot along its rollouts.
    pub mean_entropy: f64,
    pub clip_fraction: f64,
    pub kl: f64,
    pub surrogate: f64,
    pub dropped_groups: usize,
    /// `1 - Self-BLEU` of unscaffolded samples, averaged over tasks.
    pub diversity_bleu: Option<f64>,
    /// Mean pairwise embedding distance of the same samples.
    pub diversity_semantic: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
    /// Unscaffolded evaluation of the final parameters.
    pub final_eval_reward: Option<f64>,
}

impl TrainHistory {
    /// One JSON record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn metrics_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "step,t,lambda_step,mean_reward,eval_reward,mean_entropy,clip_fraction,kl,surrogate,dropped_groups,diversity_bleu,diversity_semantic\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.t,
                r.lambda_step,
                r.mean_reward,
                opt(r.eval_reward),
                r.mean_entropy,
                r.clip_fraction,
                r.kl,
                r.surrogate,
                r.dropped_groups,
                opt(r.diversity_bleu),
                opt(r.diversity_semantic),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub initial: PolicyParams,
    pub params: PolicyParams,
    pub history: TrainHistory,
}

/// Seed shared by every evaluation in a run.
pub fn eval_seed(cfg: &TrainConfig) -> u64 {
    cfg.seed ^ 0x5eed_0e7a
}

/// Initial parameters for a run: uniform logit noise keyed by the seed.
pub fn initial_params(cfg: &TrainConfig, tasks: &[RubricTask]) -> Result<PolicyParams> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("dataset has no tasks"));
    }
    for task in tasks {
        for c in task.rubric.criteria() {
            if let Some(check) = &c.check {
                check.validate(cfg.vocab_size, cfg.sampling.max_length).map_err(|e| {
                    Error::BadConfig(format!("task `{}` criterion `{}`: {e}", task.task_id, c.id))
                })?;
            }
        }
    }
    let mut rng = keyed_rng(cfg.seed, &[stream::INIT]);
    Ok(PolicyParams::random(
        tasks.len(),
        cfg.vocab_size,
        cfg.sampling.max_length,
        cfg.init_scale,
        &mut rng,
    ))
}

/// Runs training from [`initial_params`].
pub fn train(cfg: &TrainConfig, tasks: &[RubricTask], grader: &Grader) -> Result<TrainOutcome> {
    let init = initial_params(cfg, tasks)?;
    train_from(cfg, tasks, grader, init, |_, _| Ok(()))
}

/// Runs training from `init`, calling `on_step` after every step with its
/// record and the updated parameters.
pub fn train_from(
    cfg: &TrainConfig,
    tasks: &[RubricTask],
    grader: &Grader,
    init: PolicyParams,
    mut on_step: impl FnMut(&StepRecord, &PolicyParams) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::EmptyInput("dataset has no tasks"));
    }
    if init.contexts() != tasks.len() {
        return Err(Error::BadConfig(format!(
            "policy has {} contexts for {} tasks",
            init.contexts(),
            tasks.len()
        )));
    }
    let refs = task_refs(tasks);
    let total = cfg.planned_steps(tasks.len());
    let batches_per_epoch = tasks.len().div_ceil(cfg.batch_size);
    let reference = init.clone();
    let mut params = init.clone();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    let es = eval_seed(cfg);

    for step in 0..total {
        let epoch = step / batches_per_epoch;
        let within = step % batches_per_epoch;
        if within == 0 {
            order = (0..tasks.len()).collect();
            order.shuffle(&mut keyed_rng(cfg.seed, &[stream::SHUFFLE, epoch as u64]));
        }
        let lo = within * cfg.batch_size;
        let hi = (lo + cfg.batch_size).min(tasks.len());
        let batch: Vec<TaskRef<'_>> = order[lo..hi].iter().map(|&i| refs[i]).collect();

        let t = step as f64 / total as f64;
        let snapshot = params.clone();
        let eval_reward = if cfg.eval_samples > 0 && step % cfg.eval_every == 0 {
            Some(evaluate(&snapshot, &refs, grader, &cfg.sampling, cfg.eval_samples, es)?)
        } else {
            None
        };
        let (diversity_bleu, diversity_semantic) =
            if cfg.diversity_every > 0 && step % cfg.diversity_every == 0 {
                let (b, s) = diversity_probe(&snapshot, &refs, cfg, step as u64)?;
                (Some(b), Some(s))
            } else {
                (None, None)
            };

        let outcome = rollout_phase(&snapshot, &batch, t, step as u64, grader, cfg)?;
        let seqs: Vec<(usize, &TokenSeq)> = outcome
            .groups
            .iter()
            .flat_map(|g| g.samples.iter().map(move |s| (g.context, &s.response)))
            .collect();
        let mean_entropy = mean_trajectory_entropy(&snapshot, &seqs);
        let n_samples = seqs.len();
        let mean_reward = if n_samples == 0 {
            0.0
        } else {
            outcome
                .groups
                .iter()
                .flat_map(|g| &g.samples)
                .map(|s| s.reward)
                .sum::<f64>()
                / n_samples as f64
        };

        let mut stats = Vec::new();
        for chunk in outcome.groups.chunks(cfg.mini_batch_size) {
            let (next, s) = grpo_step(&params, &reference, chunk, cfg, &mut optimizer)?;
            params = next;
            stats.push(s);
        }
        let avg = |f: fn(&StepStats) -> f64| {
            if stats.is_empty() {
                0.0
            } else {
                stats.iter().map(f).sum::<f64>() / stats.len() as f64
            }
        };
        let record = StepRecord {
            step,
            t,
            lambda_step: step_ratio(t, &cfg.scaffold.decay),
            mean_reward,
            eval_reward,
            mean_entropy,
            clip_fraction: avg(|s| s.clip_fraction),
            kl: avg(|s| s.kl),
            surrogate: avg(|s| s.surrogate),
            dropped_groups: outcome.dropped.len(),
            diversity_bleu,
            diversity_semantic,
        };
        on_step(&record, &params)?;
        history.records.push(record);
    }

    if cfg.eval_samples > 0 {
        history.final_eval_reward =
            Some(evaluate(&params, &refs, grader, &cfg.sampling, cfg.eval_samples, es)?);
    }
    Ok(TrainOutcome {
        initial: init,
        params,
        history,
    })
}

fn diversity_probe(
    params: &PolicyParams,
    refs: &[TaskRef<'_>],
    cfg: &TrainConfig,
    step: u64,
) -> Result<(f64, f64)> {
    let embedder = HashNgramEmbedder::default();
    let mut bleu = 0.0;
    let mut semantic = 0.0;
    for tr in refs {
        let seqs = plain_samples(
            params,
            tr,
            cfg.diversity_samples,
            &cfg.sampling,
            cfg.seed ^ step.rotate_left(32),
            stream::DIVERSITY,
        );
        let tokens: Vec<Vec<u32>> = seqs.iter().map(|s| s.content().to_vec()).collect();
        let texts: Vec<String> = seqs.iter().map(|s| crate::policy::content_to_text(s.content())).collect();
        let r = diversity_report(&tokens, &texts, &embedder)?;
        bleu += r.one_minus_self_bleu;
        semantic += r.mean_semantic_distance;
    }
    let n = refs.len() as f64;
    Ok((bleu / n, semantic / n))
}

/// Appends history records to a JSONL stream as they are produced.
pub struct HistoryWriter<W: Write> {
    out: W,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &StepRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaffold::DecayFamily;
    use crate::synthenv::{generate_tasks, SynthTaskSpec};

    fn short_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 6,
            eval_every: 2,
            diversity_every: 3,
            ..TrainConfig::desk()
        }
    }

    fn tasks() -> Vec<RubricTask> {
        generate_tasks(&SynthTaskSpec {
            task_count: 4,
            ..SynthTaskSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn one_record_per_step_and_replayable() {
        let tasks = tasks();
        let cfg = short_cfg();
        let a = train(&cfg, &tasks, &Grader::oracle()).unwrap();
        let b = train(&cfg, &tasks, &Grader::oracle()).unwrap();
        assert_eq!(a.history.records.len(), 6);
        assert_eq!(a.history.to_jsonl().unwrap(), b.history.to_jsonl().unwrap());
        assert!(a.history.records[0].eval_reward.is_some());
        assert!(a.history.records[1].eval_reward.is_none());
        assert!(a.history.records[3].diversity_bleu.is_some());
        assert_eq!(a.history.metrics_csv().lines().count(), 7);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_params() {
        let tasks = tasks();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..short_cfg()
        };
        let out = train(&cfg, &tasks, &Grader::oracle()).unwrap();
        assert_eq!(out.params, out.initial);
        assert_eq!(out.history.records.len(), 6);
    }

    #[test]
    fn constant_and_sigmoid_agree_while_subsets_coincide() {
        // Early in a sigmoid schedule lambda_step rounds to the same subset
        // sizes as the constant schedule, so only the lambda column differs.
        let tasks = tasks();
        let sig = TrainConfig {
            epochs: 20,
            eval_samples: 0,
            ..TrainConfig::desk()
        };
        let con = TrainConfig {
            scaffold: crate::scaffold::ScaffoldConfig {
                decay: DecayFamily::Constant,
                ..sig.scaffold.clone()
            },
            ..sig.clone()
        };
        let a = train(&sig, &tasks, &Grader::oracle()).unwrap().history.records;
        let b = train(&con, &tasks, &Grader::oracle()).unwrap().history.records;
        for (x, y) in a.iter().zip(&b).take(2) {
            assert_ne!(x.lambda_step, y.lambda_step);
            let y = StepRecord {
                lambda_step: x.lambda_step,
                ..y.clone()
            };
            assert_eq!(x, &y);
        }
        assert_ne!(a.last(), b.last());
    }

    #[test]
    fn rejects_empty_dataset() {
        assert!(train(&short_cfg(), &[], &Grader::oracle()).is_err());
    }
}
