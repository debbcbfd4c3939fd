use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grader::{Grader, Response};
use crate::policy::{log_prob, sample_response, GuidanceBias, PolicyParams, SamplingConfig, TokenSeq};
use crate::rubric::{score, RubricTask};
use crate::scaffold::{integrated_ratios, sample_subset, ScaffoldAssignment};

use super::advantage::compute_advantages;
use super::config::TrainConfig;
use super::grpo::{RolloutGroup, RolloutSample};

/// Stream tags so subset draws, rollout sampling and evaluation never share
/// random numbers.
pub(crate) mod stream {
    pub const SUBSET: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const BEST_OF_N: u64 = 4;
    pub const DIVERSITY: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const INIT: u64 = 7;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator keyed by a base seed and a coordinate tuple.
pub(crate) fn keyed_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &p in parts {
        h = splitmix(h ^ p);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// A task with the policy context it samples from.
#[derive(Debug, Clone, Copy)]
pub struct TaskRef<'a> {
    pub context: usize,
    pub task: &'a RubricTask,
}

/// Indexes a dataset so task `i` uses policy context `i`.
pub fn task_refs(tasks: &[RubricTask]) -> Vec<TaskRef<'_>> {
    tasks
        .iter()
        .enumerate()
        .map(|(context, task)| TaskRef { context, task })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    pub groups: Vec<RolloutGroup>,
    /// `(task_id, reason)` for groups skipped because grading failed.
    pub dropped: Vec<(String, String)>,
}

fn grade_reward(grader: &Grader, task: &RubricTask, seq: &TokenSeq) -> Result<(crate::rubric::JudgmentVector, f64)> {
    let judgments = grader.grade_rubric(task, &Response::from_tokens(seq.content()))?;
    let reward = score(&judgments, &task.rubric)?.reward;
    Ok((judgments, reward))
}

/// Samples and grades one group per task at progress `t`.
///
/// Randomness is keyed by `(seed, step, context, sample)`, so a sample's
/// subset and token draws do not depend on how other samples consumed
/// randomness.
pub fn rollout_phase(
    snapshot: &PolicyParams,
    tasks: &[TaskRef<'_>],
    t: f64,
    step: u64,
    grader: &Grader,
    cfg: &TrainConfig,
) -> Result<RolloutOutcome> {
    let ratios = integrated_ratios(t, cfg.group_size, &cfg.scaffold)?;
    let mut groups = Vec::with_capacity(tasks.len());
    let mut dropped = Vec::new();
    'tasks: for tr in tasks {
        let ctx = tr.context as u64;
        let mut samples = Vec::with_capacity(cfg.group_size);
        for (i, &ratio) in ratios.iter().enumerate() {
            let mut subset_rng = keyed_rng(cfg.seed, &[stream::SUBSET, step, ctx, i as u64]);
            let subset = sample_subset(&tr.task.rubric, ratio, &mut subset_rng);
            let bias = GuidanceBias::from_subset(&subset, cfg.scaffold.guidance_strength);
            let mut rng = keyed_rng(cfg.seed, &[stream::ROLLOUT, step, ctx, i as u64]);
            let response = sample_response(snapshot, tr.context, &bias, &cfg.sampling, &mut rng);
            let old_logps = log_prob(snapshot, tr.context, &response);
            let (judgments, reward) = match grade_reward(grader, tr.task, &response) {
                Ok(v) => v,
                Err(e @ Error::GradingUnavailable { .. }) => {
                    dropped.push((tr.task.task_id.clone(), e.to_string()));
                    continue 'tasks;
                }
                Err(e) => return Err(e),
            };
            samples.push(RolloutSample {
                response,
                scaffold: ScaffoldAssignment { ratio, subset },
                old_logps,
                judgments,
                reward,
                advantage: 0.0,
            });
        }
        let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        for (s, a) in samples.iter_mut().zip(compute_advantages(&rewards)?) {
            s.advantage = a;
        }
        groups.push(RolloutGroup {
            task_id: tr.task.task_id.clone(),
            context: tr.context,
            samples,
        });
    }
    Ok(RolloutOutcome { groups, dropped })
}

/// Unscaffolded samples for one task, keyed by `(seed, stream, context, j)`.
pub(crate) fn plain_samples(
    params: &PolicyParams,
    tr: &TaskRef<'_>,
    n: usize,
    sampling: &SamplingConfig,
    seed: u64,
    stream_tag: u64,
) -> Vec<TokenSeq> {
    let none = GuidanceBias::none();
    (0..n)
        .map(|j| {
            let mut rng = keyed_rng(seed, &[stream_tag, tr.context as u64, j as u64]);
            sample_response(params, tr.context, &none, sampling, &mut rng)
        })
        .collect()
}

/// Mean unscaffolded reward over `samples` draws per task. The same seed
/// gives the same random numbers at every call, so evaluations of
/// different parameters are directly comparable.
pub fn evaluate(
    params: &PolicyParams,
    tasks: &[TaskRef<'_>],
    grader: &Grader,
    sampling: &SamplingConfig,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if tasks.is_empty() || samples == 0 {
        return Err(Error::EmptyInput("evaluation needs tasks and samples"));
    }
    let mut total = 0.0;
    for tr in tasks {
        for seq in plain_samples(params, tr, samples, sampling, seed, stream::EVAL) {
            total += grade_reward(grader, tr.task, &seq)?.1;
        }
    }
    Ok(total / (tasks.len() * samples) as f64)
}

/// For each `n`, the mean over tasks of the best reward among the first `n`
/// unscaffolded samples.
pub fn best_of_n(
    params: &PolicyParams,
    tasks: &[TaskRef<'_>],
    grader: &Grader,
    n_values: &[usize],
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if n_values.is_empty() || tasks.is_empty() {
        return Err(Error::EmptyInput("best-of-N needs tasks and n values"));
    }
    if n_values[0] == 0 || n_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadConfig(format!(
            "n values must be positive and strictly ascending, got {n_values:?}"
        )));
    }
    let max_n = *n_values.last().expect("nonempty");
    let mut sums = vec![0.0; n_values.len()];
    for tr in tasks {
        let rewards = plain_samples(params, tr, max_n, sampling, seed, stream::BEST_OF_N)
            .iter()
            .map(|seq| grade_reward(grader, tr.task, seq).map(|r| r.1))
            .collect::<Result<Vec<f64>>>()?;
        let mut best = f64::NEG_INFINITY;
        let mut k = 0;
        for (j, r) in rewards.iter().enumerate() {
            best = best.max(*r);
            while k < n_values.len() && n_values[k] == j + 1 {
                sums[k] += best;
                k += 1;
            }
        }
    }
    Ok(n_values
        .iter()
        .zip(sums)
        .map(|(&n, s)| (n, s / tasks.len() as f64))
        .collect())
}
