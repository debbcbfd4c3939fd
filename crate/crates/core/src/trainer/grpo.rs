//! Clipped group-relative surrogate with a KL penalty, its exact gradient,
//! and the parameter update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{accumulate_logprob_gradient, log_prob, Gradient, PolicyParams, TokenSeq};
use crate::rubric::JudgmentVector;
use crate::scaffold::ScaffoldAssignment;

use super::config::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSample {
    pub response: TokenSeq,
    pub scaffold: ScaffoldAssignment,
    /// Per-token log-probs under the rollout snapshot, without guidance.
    pub old_logps: Vec<f64>,
    pub judgments: JudgmentVector,
    pub reward: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub task_id: String,
    /// Row block of the policy table used for this task.
    pub context: usize,
    pub samples: Vec<RolloutSample>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.reward).collect()
    }

    pub fn mean_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    /// Mean clipped surrogate.
    pub surrogate: f64,
    /// Mean per-token KL estimate to the reference policy.
    pub kl: f64,
    /// `surrogate - kl_coef * kl`, the maximized quantity.
    pub objective: f64,
    /// Fraction of tokens whose clipped branch is strictly active.
    pub clip_fraction: f64,
}

/// Evaluates the objective over `groups` and, when `grad` is given,
/// accumulates its gradient with respect to `params`.
///
/// Groups and samples are averaged uniformly: `1/|B|` over groups, `1/G`
/// within a group, `1/|o|` over tokens of one response.
pub fn objective(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    groups: &[RolloutGroup],
    clip_eps: f64,
    kl_coef: f64,
    mut grad: Option<&mut Gradient>,
) -> Result<ObjectiveValue> {
    let mut surrogate = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    let mut tokens = 0usize;
    let nb = groups.len() as f64;
    for group in groups {
        let g = group.samples.len() as f64;
        let ctx = group.context;
        for sample in &group.samples {
            let seq = &sample.response;
            if seq.is_empty() {
                continue;
            }
            if sample.old_logps.len() != seq.len() {
                return Err(Error::LengthMismatch {
                    expected: seq.len(),
                    actual: sample.old_logps.len(),
                });
            }
            let new = log_prob(params, ctx, seq);
            let reference = log_prob(ref_params, ctx, seq);
            let adv = sample.advantage;
            let scale = 1.0 / (nb * g * seq.len() as f64);
            let mut weights = Vec::with_capacity(seq.len());
            for t in 0..seq.len() {
                let rho = (new[t] - sample.old_logps[t]).exp();
                let rho_clip = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps);
                let unclipped = rho * adv;
                let clip_term = rho_clip * adv;
                let delta = reference[t] - new[t];
                let k3 = delta.exp() - delta - 1.0;
                surrogate += scale * unclipped.min(clip_term);
                kl += scale * k3;
                tokens += 1;
                let clip_active = clip_term < unclipped;
                if clip_active {
                    clipped += 1;
                }
                let d_surr = if clip_active { 0.0 } else { adv * rho };
                let d_kl = 1.0 - delta.exp();
                weights.push(scale * (d_surr - kl_coef * d_kl));
            }
            if let Some(g) = grad.as_deref_mut() {
                accumulate_logprob_gradient(params, ctx, &seq.tokens, |t| weights[t], g);
            }
        }
    }
    let value = ObjectiveValue {
        surrogate,
        kl,
        objective: surrogate - kl_coef * kl,
        clip_fraction: if tokens == 0 {
            0.0
        } else {
            clipped as f64 / tokens as f64
        },
    };
    if !value.objective.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "surrogate {surrogate}, kl {kl} over {tokens} tokens"
        )));
    }
    Ok(value)
}

/// First-order optimizer state for gradient ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &PolicyParams) -> Self {
        let n = params.raw().len();
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self {
            kind,
            lr,
            m,
            v,
            steps: 0,
        }
    }

    /// Moves `params` along `grad` (ascent).
    pub fn ascend(&mut self, params: &mut PolicyParams, grad: &Gradient) {
        if self.lr == 0.0 {
            return;
        }
        self.steps += 1;
        let theta = params.raw_mut();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in theta.iter_mut().zip(&grad.values) {
                    *p += self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for i in 0..theta.len() {
                    let g = grad.values[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    theta[i] += self.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub surrogate: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// One update over a mini batch of groups. Returns the new parameters and
/// the statistics measured before the update.
///
/// Old log-probs come from the groups; they were recorded from the rollout
/// snapshot when the samples were drawn.
pub fn grpo_step(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    groups: &[RolloutGroup],
    cfg: &TrainConfig,
    optimizer: &mut Optimizer,
) -> Result<(PolicyParams, StepStats)> {
    let mut grad = Gradient::zeros_like(params);
    let value = objective(params, ref_params, groups, cfg.clip_eps, cfg.kl_coef, Some(&mut grad))?;
    let grad_norm = grad.norm();
    if !grad_norm.is_finite() {
        return Err(Error::NonFiniteLoss(format!("gradient norm {grad_norm}")));
    }
    let mut next = params.clone();
    optimizer.ascend(&mut next, &grad);
    Ok((
        next,
        StepStats {
            surrogate: value.surrogate,
            kl: value.kl,
            clip_fraction: value.clip_fraction,
            grad_norm,
        },
    ))
}
