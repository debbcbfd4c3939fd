//! Scaffolding schedule and scaffold prompts.
//!
//! Each rollout sample gets a scaffolding ratio: a per-position group
//! ratio (how much guidance sample `i` of a group receives) times a step
//! ratio that decays with training progress. The ratio picks how many
//! rubric criteria are revealed to that sample as hints.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rubric::{Criterion, Rubric, RubricTask};

const SCAFFOLD_TEMPLATE: &str = include_str!("../templates/scaffold_prompt.txt");
const INCLUDE_SLOT: &str = "<<include_criteria>>";
const AVOID_SLOT: &str = "<<avoid_criteria>>";

/// How guidance is spread across the samples of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum IntraGroupMode {
    /// Sample `i` (1-based) of `G` gets `(G - i) / (G - 1)`.
    Linear,
    /// The first `n` samples are fully scaffolded, the rest get nothing.
    Binary(usize),
}

impl fmt::Display for IntraGroupMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntraGroupMode::Linear => f.write_str("linear"),
            IntraGroupMode::Binary(n) => write!(f, "binary:{n}"),
        }
    }
}

impl FromStr for IntraGroupMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "linear" {
            return Ok(IntraGroupMode::Linear);
        }
        if let Some(n) = s.strip_prefix("binary:").or_else(|| s.strip_prefix("binary")) {
            let n = n.trim_start_matches(['(', ':']).trim_end_matches(')');
            return n
                .parse()
                .map(IntraGroupMode::Binary)
                .map_err(|_| Error::BadConfig(format!("bad binary count in `{s}`")));
        }
        Err(Error::BadConfig(format!(
            "unknown intra-group mode `{s}` (expected linear or binary:N)"
        )))
    }
}

impl TryFrom<String> for IntraGroupMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<IntraGroupMode> for String {
    fn from(m: IntraGroupMode) -> String {
        m.to_string()
    }
}

/// Step-level decay of scaffolding over training progress `t` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayFamily {
    /// `1 / (1 + exp(alpha * (t - t0)))`.
    Sigmoid { alpha: f64, t0: f64 },
    Constant,
    /// `1 - t`.
    Linear,
    /// `(1 - t)^n`.
    Power { n: f64 },
}

impl Default for DecayFamily {
    fn default() -> Self {
        DecayFamily::Sigmoid {
            alpha: 125.0,
            t0: 0.2,
        }
    }
}

impl DecayFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DecayFamily::Sigmoid { alpha, t0 } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::BadConfig(format!("sigmoid alpha must be > 0, got {alpha}")));
                }
                if !(0.0..=1.0).contains(&t0) {
                    return Err(Error::BadConfig(format!("sigmoid t0 must lie in [0, 1], got {t0}")));
                }
            }
            DecayFamily::Power { n } if !(n > 0.0 && n.is_finite()) => {
                return Err(Error::BadConfig(format!("power exponent must be > 0, got {n}")));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match *self {
            DecayFamily::Sigmoid { alpha, t0 } => format!("sigmoid(alpha={alpha},t0={t0})"),
            DecayFamily::Constant => "constant".into(),
            DecayFamily::Linear => "linear".into(),
            DecayFamily::Power { n } => format!("power(n={n})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaffoldConfig {
    pub intra: IntraGroupMode,
    pub decay: DecayFamily,
    /// Logit offset per hinted token when the toy policy samples.
    pub guidance_strength: f64,
}

impl Default for ScaffoldConfig {
    fn default() -> Self {
        Self {
            intra: IntraGroupMode::Linear,
            decay: DecayFamily::default(),
            guidance_strength: 2.0,
        }
    }
}

impl ScaffoldConfig {
    pub fn validate(&self, group_size: usize) -> Result<()> {
        self.decay.validate()?;
        if !(self.guidance_strength >= 0.0 && self.guidance_strength.is_finite()) {
            return Err(Error::BadConfig(format!(
                "guidance strength must be >= 0, got {}",
                self.guidance_strength
            )));
        }
        if let IntraGroupMode::Binary(n) = self.intra {
            if n > group_size {
                return Err(Error::BadConfig(format!(
                    "binary({n}) exceeds group size {group_size}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-sample scaffold: the ratio it was drawn with and the revealed criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldAssignment {
    pub ratio: f64,
    pub subset: Vec<Criterion>,
}

pub fn group_ratios(group_size: usize, mode: IntraGroupMode) -> Result<Vec<f64>> {
    if group_size == 0 {
        return Err(Error::BadConfig("group size must be at least 1".into()));
    }
    match mode {
        IntraGroupMode::Linear if group_size == 1 => Ok(vec![1.0]),
        IntraGroupMode::Linear => {
            let denom = (group_size - 1) as f64;
            Ok((1..=group_size)
                .map(|i| (group_size - i) as f64 / denom)
                .collect())
        }
        IntraGroupMode::Binary(n) if n > group_size => Err(Error::BadConfig(format!(
            "binary({n}) exceeds group size {group_size}"
        ))),
        IntraGroupMode::Binary(n) => Ok((0..group_size)
            .map(|i| if i < n { 1.0 } else { 0.0 })
            .collect()),
    }
}

pub fn step_ratio(t: f64, decay: &DecayFamily) -> f64 {
    let t = t.clamp(0.0, 1.0);
    match *decay {
        DecayFamily::Sigmoid { alpha, t0 } => 1.0 / (1.0 + (alpha * (t - t0)).exp()),
        DecayFamily::Constant => 1.0,
        DecayFamily::Linear => 1.0 - t,
        DecayFamily::Power { n } => (1.0 - t).powf(n),
    }
}

/// Scaffolding ratio of every sample in a group at progress `t`.
pub fn integrated_ratios(t: f64, group_size: usize, config: &ScaffoldConfig) -> Result<Vec<f64>> {
    let step = step_ratio(t, &config.decay);
    Ok(group_ratios(group_size, config.intra)?
        .into_iter()
        .map(|g| step * g)
        .collect())
}

/// Number of criteria revealed at ratio `lambda`: `round(lambda * n)`,
/// halves rounded away from zero.
pub fn subset_size(lambda: f64, n: usize) -> usize {
    ((lambda.clamp(0.0, 1.0) * n as f64).round() as usize).min(n)
}

/// Draws `subset_size(lambda, N)` distinct criteria uniformly without
/// replacement, returned in rubric order.
pub fn sample_subset(rubric: &Rubric, lambda: f64, rng: &mut impl Rng) -> Vec<Criterion> {
    let n = rubric.len();
    let k = subset_size(lambda, n);
    let mut picked = rand::seq::index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| rubric.criteria()[i].clone())
        .collect()
}

/// Renders the scaffold preamble listing positive-point criteria to include
/// and negative-point ones to avoid. An empty subset renders as `""`, and
/// a section with no criteria is dropped along with its header.
pub fn render_scaffold_prompt(task: &RubricTask, subset: &[Criterion]) -> Result<String> {
    for c in subset {
        match task.rubric.position(&c.id) {
            Some(i) if task.rubric.criteria()[i] == *c => {}
            _ => return Err(Error::SubsetNotInRubric(c.id.clone())),
        }
    }
    if subset.is_empty() {
        return Ok(String::new());
    }
    let list = |positive: bool| {
        subset
            .iter()
            .filter(|c| (c.points > 0.0) == positive)
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    let include = list(true);
    let avoid = list(false);

    let mut text = SCAFFOLD_TEMPLATE.to_string();
    for (slot, body) in [(INCLUDE_SLOT, include), (AVOID_SLOT, avoid)] {
        text = if body.is_empty() {
            drop_section(&text, slot)
        } else {
            text.replace(slot, &body)
        };
    }
    Ok(text)
}

/// Removes the paragraph holding `slot` and the header paragraph before it.
fn drop_section(text: &str, slot: &str) -> String {
    let at = text.find(slot).expect("slot present in template");
    let header_start = text[..at - 2].rfind("\n\n").map_or(0, |i| i + 2);
    let end = (at + slot.len() + 2).min(text.len());
    format!("{}{}", &text[..header_start], &text[end..])
}

/// `t,lambda_step` rows at `points + 1` evenly spaced progress values.
pub fn schedule_csv(decay: &DecayFamily, points: usize) -> String {
    let points = points.max(1);
    let mut out = String::from("t,lambda_step\n");
    for i in 0..=points {
        let t = i as f64 / points as f64;
        out.push_str(&format!("{t},{}\n", step_ratio(t, decay)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rubric::Turn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rubric(n: usize) -> Rubric {
        Rubric::new(
            (0..n)
                .map(|i| Criterion::new(format!("c{i}"), format!("criterion {i}"), 1.0 + i as f64))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_group_ratios() {
        let r = group_ratios(8, IntraGroupMode::Linear).unwrap();
        let want: Vec<f64> = (0..8).map(|j| (7 - j) as f64 / 7.0).collect();
        assert_eq!(r, want);
        assert_eq!(group_ratios(2, IntraGroupMode::Linear).unwrap(), vec![1.0, 0.0]);
        assert_eq!(group_ratios(1, IntraGroupMode::Linear).unwrap(), vec![1.0]);
    }

    #[test]
    fn binary_group_ratios() {
        assert_eq!(group_ratios(8, IntraGroupMode::Binary(0)).unwrap(), vec![0.0; 8]);
        assert_eq!(group_ratios(8, IntraGroupMode::Binary(8)).unwrap(), vec![1.0; 8]);
        assert_eq!(
            group_ratios(4, IntraGroupMode::Binary(1)).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        assert!(matches!(
            group_ratios(4, IntraGroupMode::Binary(5)),
            Err(Error::BadConfig(_))
        ));
    }

    #[test]
    fn step_ratio_families() {
        let sig = DecayFamily::Sigmoid { alpha: 125.0, t0: 0.2 };
        assert_eq!(step_ratio(0.2, &sig), 0.5);
        let at_03 = step_ratio(0.3, &sig);
        assert!(at_03 > 3.7e-6 && at_03 < 3.8e-6, "{at_03}");
        assert_eq!(step_ratio(1.0, &DecayFamily::Linear), 0.0);
        assert_eq!(step_ratio(0.37, &DecayFamily::Constant), 1.0);
        assert!((step_ratio(0.5, &DecayFamily::Power { n: 2.0 }) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn integrated_is_elementwise_product() {
        let cfg = ScaffoldConfig::default();
        let r = integrated_ratios(0.2, 8, &cfg).unwrap();
        assert_eq!(r[0], 0.5);
        assert!((r[1] - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(r[7], 0.0);

        let lin = ScaffoldConfig { decay: DecayFamily::Linear, ..cfg.clone() };
        assert!(integrated_ratios(1.0, 8, &lin).unwrap().iter().all(|&x| x == 0.0));

        let constant = ScaffoldConfig { decay: DecayFamily::Constant, ..cfg };
        assert_eq!(
            integrated_ratios(0.9, 8, &constant).unwrap(),
            group_ratios(8, IntraGroupMode::Linear).unwrap()
        );
    }

    #[test]
    fn subset_sizes_and_order() {
        let r = rubric(7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_subset(&r, 1.0, &mut rng), r.criteria().to_vec());
        assert_eq!(sample_subset(&r, 0.5, &mut rng).len(), 4);
        assert!(sample_subset(&r, 0.0, &mut rng).is_empty());
        let s = sample_subset(&r, 0.6, &mut rng);
        let positions: Vec<usize> = s.iter().map(|c| r.position(&c.id).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subset_sampling_is_seed_reproducible() {
        let r = rubric(10);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_subset(&r, 0.4, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn intra_mode_parsing() {
        assert_eq!("linear".parse::<IntraGroupMode>().unwrap(), IntraGroupMode::Linear);
        assert_eq!("binary:4".parse::<IntraGroupMode>().unwrap(), IntraGroupMode::Binary(4));
        assert_eq!("Binary(2)".parse::<IntraGroupMode>().unwrap(), IntraGroupMode::Binary(2));
        assert!("quadratic".parse::<IntraGroupMode>().is_err());
    }

    fn task() -> RubricTask {
        let rubric = Rubric::new(vec![
            Criterion::new("a", "Mentions the dosage", 5.0),
            Criterion::new("b", "Recommends an unsafe remedy", -2.0),
            Criterion::new("c", "Suggests seeing a doctor", 3.0),
        ])
        .unwrap();
        RubricTask::new("t", vec![Turn::user("q")], rubric).unwrap()
    }

    #[test]
    fn scaffold_sections() {
        let t = task();
        let c = t.rubric.criteria();
        assert_eq!(render_scaffold_prompt(&t, &[]).unwrap(), "");

        let both = render_scaffold_prompt(&t, &[c[0].clone(), c[1].clone()]).unwrap();
        assert!(both.contains("IMPORTANT POINTS TO INCLUDE"));
        assert!(both.contains("IMPORTANT POINTS TO AVOID"));
        assert!(both.contains("considered cheating and is strictly prohibited"));

        let pos = render_scaffold_prompt(&t, &[c[0].clone(), c[2].clone()]).unwrap();
        assert!(!pos.contains("IMPORTANT POINTS TO AVOID"));
        assert!(pos.contains("Mentions the dosage\n\nSuggests seeing a doctor\n\nPlease provide"));

        let neg = render_scaffold_prompt(&t, &[c[1].clone()]).unwrap();
        assert!(!neg.contains("IMPORTANT POINTS TO INCLUDE"));
        assert!(neg.contains("criteria:\n\nIMPORTANT POINTS TO AVOID"));
    }

    #[test]
    fn scaffold_rejects_foreign_criteria() {
        let t = task();
        let stranger = Criterion::new("z", "not in rubric", 1.0);
        assert!(matches!(
            render_scaffold_prompt(&t, &[stranger]),
            Err(Error::SubsetNotInRubric(_))
        ));
    }

    #[test]
    fn schedule_csv_shape() {
        let csv = schedule_csv(&DecayFamily::Constant, 4);
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",1")));
    }
}
