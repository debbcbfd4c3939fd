//! Rubric-scaffolded reinforcement learning on a small tabular token policy.
//!
//! Rewards come from checklist-style rubrics graded per criterion. During
//! rollouts a subset of the rubric is revealed to the sampler as guidance;
//! the revealed fraction shrinks over training and differs between samples
//! of one group. Updates use a clipped group-relative surrogate with a KL
//! penalty to the initial policy.

pub mod dataset;
pub mod error;
pub mod grader;
pub mod metrics;
pub mod policy;
pub mod rubric;
pub mod rubricgen;
pub mod scaffold;
pub mod synthenv;
pub mod trainer;

pub use error::{Error, PartialJudgments, Result};
pub use grader::{Grader, GraderBackend, Response};
pub use policy::{GuidanceBias, PolicyParams, SamplingConfig, TokenSeq, EOS};
pub use rubric::{
    normalized_reward, positive_total, score, score_vector, Criterion, JudgmentVector, Role,
    Rubric, RubricTask, ScoreReport, Turn,
};
pub use scaffold::{DecayFamily, IntraGroupMode, ScaffoldConfig};
pub use synthenv::{SynthTaskSpec, SyntheticCheck};
pub use trainer::{RolloutGroup, StepRecord, TrainConfig, TrainHistory};
