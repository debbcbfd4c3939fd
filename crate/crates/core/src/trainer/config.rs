use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::SamplingConfig;
use crate::scaffold::ScaffoldConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Samples per task (G).
    pub group_size: usize,
    /// Tasks per rollout batch.
    pub batch_size: usize,
    /// Groups per gradient update.
    pub mini_batch_size: usize,
    pub learning_rate: f64,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub epochs: usize,
    /// Overrides `epochs * ceil(tasks / batch_size)` when set.
    pub total_steps: Option<usize>,
    pub seed: u64,
    /// Token vocabulary of the tabular policy, end marker included.
    pub vocab_size: usize,
    pub optimizer: OptimizerKind,
    /// Half-width of the uniform initial logit noise.
    pub init_scale: f64,
    /// Unscaffolded samples per task for evaluation; 0 disables evaluation.
    pub eval_samples: usize,
    /// Evaluate every this many steps (and always at the first and last).
    pub eval_every: usize,
    /// Diversity probe cadence in steps; 0 disables it.
    pub diversity_every: usize,
    pub diversity_samples: usize,
    pub scaffold: ScaffoldConfig,
    pub sampling: SamplingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small-scale defaults sized for the tabular policy.
    pub fn desk() -> Self {
        Self {
            group_size: 8,
            batch_size: 16,
            mini_batch_size: 8,
            learning_rate: 0.05,
            clip_eps: 0.2,
            kl_coef: 1e-3,
            epochs: 200,
            total_steps: None,
            seed: 0,
            vocab_size: 32,
            optimizer: OptimizerKind::default(),
            init_scale: 1.0,
            eval_samples: 8,
            eval_every: 10,
            diversity_every: 0,
            diversity_samples: 16,
            scaffold: ScaffoldConfig::default(),
            sampling: SamplingConfig::default(),
        }
    }

    /// Large-model hyperparameters, kept for reference.
    pub fn paper() -> Self {
        Self {
            group_size: 8,
            batch_size: 64,
            mini_batch_size: 32,
            learning_rate: 1e-6,
            epochs: 5,
            sampling: SamplingConfig {
                max_length: 4096,
                ..SamplingConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::BadConfig(format!(
                "unknown profile `{other}` (expected desk or paper)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.group_size < 2 {
            return bad(format!("group size must be >= 2, got {}", self.group_size));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab size must be >= 2, got {}", self.vocab_size));
        }
        if self.batch_size == 0 || self.mini_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.mini_batch_size > self.batch_size {
            return bad(format!(
                "mini batch {} exceeds batch {}",
                self.mini_batch_size, self.batch_size
            ));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return bad(format!("clip coefficient must be > 0, got {}", self.clip_eps));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return bad(format!("KL coefficient must be >= 0, got {}", self.kl_coef));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init scale must be >= 0, got {}", self.init_scale));
        }
        if self.epochs == 0 && self.total_steps.is_none() {
            return bad("epochs must be positive".into());
        }
        if self.total_steps == Some(0) {
            return bad("total steps must be positive".into());
        }
        if self.eval_samples > 0 && self.eval_every == 0 {
            return bad("eval_every must be positive when evaluation is on".into());
        }
        if self.diversity_every > 0 && self.diversity_samples < 2 {
            return bad("diversity probe needs at least 2 samples".into());
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0".into());
            }
        }
        self.sampling.validate()?;
        self.scaffold.validate(self.group_size)
    }

    /// Planned optimization steps for a dataset of `tasks` tasks.
    pub fn planned_steps(&self, tasks: usize) -> usize {
        self.total_steps
            .unwrap_or_else(|| self.epochs * tasks.div_ceil(self.batch_size).max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        TrainConfig::desk().validate().unwrap();
        TrainConfig::paper().validate().unwrap();
        assert_eq!(TrainConfig::desk().planned_steps(16), 200);
        assert_eq!(TrainConfig::desk().planned_steps(17), 400);
        assert!(TrainConfig::profile("huge").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::desk();
        c.group_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.mini_batch_size = 32;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.clip_eps = 0.0;
        assert!(c.validate().is_err());
    }
}
