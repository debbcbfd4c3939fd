//! Synthetic tasks whose rubric criteria can be checked exactly.
//!
//! Each task asks the toy policy for a token sequence; its rubric mixes
//! positive criteria (tokens to include, ordering, length) with negative
//! ones (tokens that should not appear). Every generated rubric comes with a
//! witness sequence that earns full credit, so no task is unsatisfiable.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::EOS;
use crate::rubric::{self, Criterion, JudgmentVector, Rubric, RubricTask, Turn};

/// Exact semantics of a synthetic criterion over a response's content
/// tokens (the end marker excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticCheck {
    /// Met when `token` occurs anywhere.
    ContainsToken { token: u32 },
    /// Describes the undesirable use of `token`: met when it occurs. Pair
    /// with negative points.
    AvoidToken { token: u32 },
    /// Met when `first` occurs and its first occurrence precedes the first
    /// occurrence of `second`, which must also occur.
    OrderedPair { first: u32, second: u32 },
    LengthAtLeast { min: usize },
    LengthAtMost { max: usize },
    StartsWith { token: u32 },
}

impl SyntheticCheck {
    pub fn describe(&self) -> String {
        match *self {
            SyntheticCheck::ContainsToken { token } => {
                format!("The response contains token {token}.")
            }
            SyntheticCheck::AvoidToken { token } => format!("The response uses token {token}."),
            SyntheticCheck::OrderedPair { first, second } => format!(
                "The response contains token {first} and, after its first occurrence, token {second}."
            ),
            SyntheticCheck::LengthAtLeast { min } => {
                format!("The response is at least {min} tokens long.")
            }
            SyntheticCheck::LengthAtMost { max } => {
                format!("The response is at most {max} tokens long.")
            }
            SyntheticCheck::StartsWith { token } => {
                format!("The response starts with token {token}.")
            }
        }
    }

    /// Tokens the check refers to.
    pub fn tokens(&self) -> Vec<u32> {
        match *self {
            SyntheticCheck::ContainsToken { token }
            | SyntheticCheck::AvoidToken { token }
            | SyntheticCheck::StartsWith { token } => vec![token],
            SyntheticCheck::OrderedPair { first, second } => vec![first, second],
            SyntheticCheck::LengthAtLeast { .. } | SyntheticCheck::LengthAtMost { .. } => vec![],
        }
    }

    pub fn validate(&self, vocab_size: usize, max_length: usize) -> Result<()> {
        for t in self.tokens() {
            if t == EOS || t as usize >= vocab_size {
                return Err(Error::BadSpec(format!(
                    "{self:?} references token {t} outside content range 1..{vocab_size}"
                )));
            }
        }
        match *self {
            SyntheticCheck::OrderedPair { first, second } if first == second => Err(
                Error::BadSpec(format!("{self:?} orders a token against itself")),
            ),
            SyntheticCheck::LengthAtLeast { min: k } | SyntheticCheck::LengthAtMost { max: k }
                if k > max_length =>
            {
                Err(Error::BadSpec(format!(
                    "{self:?} exceeds max length {max_length}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Evaluates `check` against content tokens.
pub fn oracle_check(content: &[u32], check: &SyntheticCheck) -> bool {
    let first_pos = |x: u32| content.iter().position(|&t| t == x);
    match *check {
        SyntheticCheck::ContainsToken { token } | SyntheticCheck::AvoidToken { token } => {
            content.contains(&token)
        }
        SyntheticCheck::OrderedPair { first, second } => {
            matches!((first_pos(first), first_pos(second)), (Some(a), Some(b)) if a < b)
        }
        SyntheticCheck::LengthAtLeast { min } => content.len() >= min,
        SyntheticCheck::LengthAtMost { max } => content.len() <= max,
        SyntheticCheck::StartsWith { token } => content.first() == Some(&token),
    }
}

/// Oracle judgments for a whole rubric; `None` if some criterion is free-text.
pub fn oracle_judgments(content: &[u32], rubric: &Rubric) -> Option<JudgmentVector> {
    rubric
        .criteria()
        .iter()
        .map(|c| c.check.as_ref().map(|chk| oracle_check(content, chk)))
        .collect::<Option<Vec<_>>>()
        .map(JudgmentVector::new)
}

/// Oracle reward of `content` on `task`, for tasks with fully synthetic rubrics.
pub fn oracle_reward(content: &[u32], task: &RubricTask) -> Result<f64> {
    let judgments = oracle_judgments(content, &task.rubric).ok_or_else(|| {
        Error::OracleUnsupported(format!("task `{}` has free-text criteria", task.task_id))
    })?;
    Ok(rubric::score(&judgments, &task.rubric)?.reward)
}

/// Knobs for [`generate_tasks`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthTaskSpec {
    pub seed: u64,
    pub task_count: usize,
    pub vocab_size: usize,
    pub max_length: usize,
    pub min_criteria: usize,
    pub max_criteria: usize,
    /// Probability that a criterion is a negative-point one.
    pub negative_fraction: f64,
    pub positive_points: (i32, i32),
    pub negative_points: (i32, i32),
}

impl Default for SynthTaskSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            task_count: 16,
            vocab_size: 32,
            max_length: 16,
            min_criteria: 4,
            max_criteria: 6,
            negative_fraction: 0.25,
            positive_points: (1, 10),
            negative_points: (-10, -1),
        }
    }
}

impl SynthTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSpec(m));
        if self.task_count == 0 {
            return bad("task_count must be positive".into());
        }
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.max_length == 0 {
            return bad("max_length must be positive".into());
        }
        if self.min_criteria == 0 || self.min_criteria > self.max_criteria {
            return bad(format!(
                "criteria range {}..={} is empty or starts at zero",
                self.min_criteria, self.max_criteria
            ));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return bad(format!(
                "negative_fraction {} outside [0, 1]",
                self.negative_fraction
            ));
        }
        let (plo, phi) = self.positive_points;
        if plo < 1 || plo > phi {
            return bad(format!("positive point range {plo}..={phi} invalid"));
        }
        let (nlo, nhi) = self.negative_points;
        if nhi > -1 || nlo > nhi {
            return bad(format!("negative point range {nlo}..={nhi} invalid"));
        }
        Ok(())
    }
}

const MAX_ATTEMPTS: usize = 10_000;

/// Deterministically generates `spec.task_count` satisfiable tasks.
pub fn generate_tasks(spec: &SynthTaskSpec) -> Result<Vec<RubricTask>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.task_count)
        .map(|i| generate_task(spec, i, &mut rng))
        .collect()
}

fn generate_task(spec: &SynthTaskSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<RubricTask> {
    for _ in 0..MAX_ATTEMPTS {
        let checks = draw_checks(spec, rng);
        if !checks.iter().any(|(_, p)| *p > 0) {
            continue;
        }
        let Some(witness) = build_witness(spec, &checks) else {
            continue;
        };
        let criteria = checks
            .iter()
            .enumerate()
            .map(|(j, (check, points))| {
                Criterion::new(format!("c{j}"), check.describe(), f64::from(*points))
                    .with_check(*check)
            })
            .collect();
        let rubric = Rubric::new(criteria)?;
        let mut task = RubricTask::new(
            format!("synth-{index:04}"),
            vec![Turn::user(format!(
                "Task {index}: respond with a sequence of tokens."
            ))],
            rubric,
        )?;
        if oracle_reward(&witness, &task)? != 1.0 {
            continue;
        }
        task.witness = Some(witness);
        return Ok(task);
    }
    Err(Error::BadSpec(format!(
        "could not generate a satisfiable task after {MAX_ATTEMPTS} attempts"
    )))
}

fn draw_checks(spec: &SynthTaskSpec, rng: &mut ChaCha8Rng) -> Vec<(SyntheticCheck, i32)> {
    let n = rng.gen_range(spec.min_criteria..=spec.max_criteria);
    let vocab = spec.vocab_size as u32;
    let mut out: Vec<(SyntheticCheck, i32)> = Vec::with_capacity(n);
    while out.len() < n {
        let token = rng.gen_range(1..vocab);
        let check = if rng.gen_bool(spec.negative_fraction) {
            let points = rng.gen_range(spec.negative_points.0..=spec.negative_points.1);
            (SyntheticCheck::AvoidToken { token }, points)
        } else {
            let points = rng.gen_range(spec.positive_points.0..=spec.positive_points.1);
            let check = match rng.gen_range(0..10) {
                0..=4 => SyntheticCheck::ContainsToken { token },
                5 | 6 => {
                    let second = rng.gen_range(1..vocab);
                    SyntheticCheck::OrderedPair {
                        first: token,
                        second,
                    }
                }
                7 => SyntheticCheck::StartsWith { token },
                8 => SyntheticCheck::LengthAtLeast {
                    min: rng.gen_range(1..=spec.max_length.div_ceil(2)),
                },
                _ => SyntheticCheck::LengthAtMost {
                    max: rng.gen_range(spec.max_length / 2..=spec.max_length).max(1),
                },
            };
            (check, points)
        };
        if check.0.validate(spec.vocab_size, spec.max_length).is_err() {
            continue;
        }
        if out.iter().any(|(c, _)| *c == check.0) {
            continue;
        }
        out.push(check);
    }
    out
}

/// Builds a full-credit sequence: required tokens in an order honouring
/// every precedence constraint, padded with unreferenced filler up to the
/// minimum length. Returns `None` when the constraints conflict.
fn build_witness(spec: &SynthTaskSpec, checks: &[(SyntheticCheck, i32)]) -> Option<Vec<u32>> {
    let mut required = BTreeSet::new();
    let mut forbidden = BTreeSet::new();
    let mut edges: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    let mut start = None;
    let mut min_len = 0usize;
    let mut max_len = spec.max_length;

    for (check, points) in checks {
        if *points < 0 {
            // Negative criteria must stay unmet.
            match *check {
                SyntheticCheck::AvoidToken { token } | SyntheticCheck::ContainsToken { token } => {
                    forbidden.insert(token);
                }
                _ => return None,
            }
            continue;
        }
        match *check {
            SyntheticCheck::ContainsToken { token } => {
                required.insert(token);
            }
            SyntheticCheck::AvoidToken { .. } => return None,
            SyntheticCheck::OrderedPair { first, second } => {
                required.insert(first);
                required.insert(second);
                edges.entry(first).or_default().insert(second);
            }
            SyntheticCheck::StartsWith { token } => {
                if start.replace(token).is_some_and(|s| s != token) {
                    return None;
                }
                required.insert(token);
            }
            SyntheticCheck::LengthAtLeast { min } => min_len = min_len.max(min),
            SyntheticCheck::LengthAtMost { max } => max_len = max_len.min(max),
        }
    }
    if !required.is_disjoint(&forbidden) {
        return None;
    }

    // Kahn's algorithm with the start token forced first.
    let mut indegree: BTreeMap<u32, usize> = required.iter().map(|&t| (t, 0)).collect();
    for targets in edges.values() {
        for t in targets {
            *indegree.get_mut(t)? += 1;
        }
    }
    let mut order = Vec::with_capacity(required.len());
    let mut ready: BTreeSet<u32> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&t, _)| t)
        .collect();
    if let Some(s) = start {
        if !ready.remove(&s) {
            return None;
        }
        order.push(s);
        release(s, &edges, &mut indegree, &mut ready);
    }
    while let Some(&t) = ready.iter().next() {
        ready.remove(&t);
        order.push(t);
        release(t, &edges, &mut indegree, &mut ready);
    }
    if order.len() != required.len() {
        return None;
    }

    let filler = (1..spec.vocab_size as u32)
        .find(|t| !required.contains(t) && !forbidden.contains(t) && !edges.contains_key(t))?;
    while order.len() < min_len {
        order.push(filler);
    }
    (order.len() <= max_len).then_some(order)
}

fn release(
    t: u32,
    edges: &BTreeMap<u32, BTreeSet<u32>>,
    indegree: &mut BTreeMap<u32, usize>,
    ready: &mut BTreeSet<u32>,
) {
    if let Some(targets) = edges.get(&t) {
        for u in targets {
            let d = indegree.get_mut(u).expect("edge target is required");
            *d -= 1;
            if *d == 0 {
                ready.insert(*u);
            }
        }
    }
}

/// Draws a response from a policy that picks every token, end marker
/// included, uniformly at random. Used to probe task difficulty.
pub fn uniform_random_response(vocab_size: usize, max_length: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut content = Vec::new();
    while content.len() < max_length {
        let t = rng.gen_range(0..vocab_size as u32);
        if t == EOS {
            break;
        }
        content.push(t);
    }
    content
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_examples() {
        assert!(oracle_check(&[1, 5, 2], &SyntheticCheck::ContainsToken { token: 5 }));
        let pair = SyntheticCheck::OrderedPair { first: 3, second: 4 };
        assert!(!oracle_check(&[4, 3], &pair));
        assert!(oracle_check(&[3, 9, 4], &pair));
        assert!(!oracle_check(&[3, 9], &pair));
        assert!(!oracle_check(&[1, 2, 3], &SyntheticCheck::LengthAtMost { max: 2 }));
        assert!(oracle_check(&[1, 2, 3], &SyntheticCheck::LengthAtLeast { min: 3 }));
        assert!(oracle_check(&[6, 1], &SyntheticCheck::StartsWith { token: 6 }));
        assert!(!oracle_check(&[], &SyntheticCheck::StartsWith { token: 6 }));
        // The undesirable behavior occurred, so the criterion is met.
        assert!(oracle_check(&[1, 3], &SyntheticCheck::AvoidToken { token: 3 }));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthTaskSpec::default();
        assert_eq!(generate_tasks(&spec).unwrap(), generate_tasks(&spec).unwrap());
        let other = SynthTaskSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate_tasks(&spec).unwrap(), generate_tasks(&other).unwrap());
    }

    #[test]
    fn zero_negative_fraction_yields_no_penalties() {
        let spec = SynthTaskSpec {
            negative_fraction: 0.0,
            task_count: 50,
            ..Default::default()
        };
        for task in generate_tasks(&spec).unwrap() {
            assert!(task.rubric.criteria().iter().all(|c| c.points > 0.0));
        }
    }

    #[test]
    fn every_task_has_full_credit_witness() {
        for seed in 0..5 {
            let spec = SynthTaskSpec {
                seed,
                task_count: 40,
                ..Default::default()
            };
            for task in generate_tasks(&spec).unwrap() {
                let w = task.witness.as_ref().unwrap();
                assert!(w.len() <= spec.max_length);
                assert_eq!(oracle_reward(w, &task).unwrap(), 1.0, "{}", task.task_id);
                assert!(task.rubric.criteria().iter().all(|c| c.check.is_some()));
            }
        }
    }

    #[test]
    fn spec_validation() {
        let ok = SynthTaskSpec::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SynthTaskSpec { task_count: 0, ..ok.clone() },
            SynthTaskSpec { min_criteria: 5, max_criteria: 3, ..ok.clone() },
            SynthTaskSpec { negative_fraction: 1.5, ..ok.clone() },
            SynthTaskSpec { positive_points: (0, 10), ..ok.clone() },
            SynthTaskSpec { negative_points: (-10, 2), ..ok.clone() },
        ] {
            assert!(matches!(generate_tasks(&bad), Err(Error::BadSpec(_))));
        }
    }

    #[test]
    fn check_validation() {
        assert!(SyntheticCheck::ContainsToken { token: EOS }.validate(32, 16).is_err());
        assert!(SyntheticCheck::ContainsToken { token: 32 }.validate(32, 16).is_err());
        assert!(SyntheticCheck::LengthAtLeast { min: 17 }.validate(32, 16).is_err());
        assert!(SyntheticCheck::OrderedPair { first: 2, second: 2 }.validate(32, 16).is_err());
        assert!(SyntheticCheck::OrderedPair { first: 2, second: 3 }.validate(32, 16).is_ok());
    }

    #[test]
    fn check_descriptor_json_shape() {
        let c = SyntheticCheck::OrderedPair { first: 3, second: 4 };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"kind":"ordered_pair","first":3,"second":4}"#);
        assert_eq!(serde_json::from_str::<SyntheticCheck>(&s).unwrap(), c);
    }
}
