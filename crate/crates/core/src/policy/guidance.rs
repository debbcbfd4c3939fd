//! Logit bias that lets scaffold criteria steer sampling.
//!
//! The toy policy cannot read a prompt, so a scaffold subset is turned into
//! additive, prefix-dependent logit offsets instead: criteria with positive
//! points push toward satisfying their check, negative ones push away from
//! it. The bias only affects sampling; log-probabilities used for updates
//! never see it.

use crate::rubric::Criterion;
use crate::synthenv::SyntheticCheck;

use super::EOS;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rule {
    Encourage(SyntheticCheck),
    Discourage(SyntheticCheck),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GuidanceBias {
    strength: f64,
    rules: Vec<Rule>,
    /// Prefix-independent per-token offsets.
    fixed: Vec<f64>,
}

impl GuidanceBias {
    pub fn none() -> Self {
        Self::default()
    }

    /// Bias from a scaffold subset with per-hint strength `beta`.
    /// Free-text criteria contribute nothing.
    pub fn from_subset(subset: &[Criterion], beta: f64) -> Self {
        let rules = subset
            .iter()
            .filter_map(|c| {
                let check = c.check?;
                Some(if c.points > 0.0 {
                    Rule::Encourage(check)
                } else {
                    Rule::Discourage(check)
                })
            })
            .collect();
        Self {
            strength: beta,
            rules,
            fixed: Vec::new(),
        }
    }

    /// A static per-token bias, applied at every position.
    pub fn fixed(offsets: Vec<f64>) -> Self {
        Self {
            strength: 0.0,
            rules: Vec::new(),
            fixed: offsets,
        }
    }

    pub fn is_zero(&self) -> bool {
        (self.rules.is_empty() || self.strength == 0.0) && self.fixed.iter().all(|&b| b == 0.0)
    }

    /// Adds the offsets for the next position after `content` to `logits`.
    pub fn apply(&self, content: &[u32], logits: &mut [f64]) {
        for (l, b) in logits.iter_mut().zip(&self.fixed) {
            *l += b;
        }
        if self.strength == 0.0 {
            return;
        }
        let beta = self.strength;
        let seen = |x: u32| content.contains(&x);
        let mut add = |tok: u32, delta: f64| {
            if let Some(l) = logits.get_mut(tok as usize) {
                *l += delta;
            }
        };
        for rule in &self.rules {
            match *rule {
                Rule::Encourage(check) => match check {
                    SyntheticCheck::ContainsToken { token } => {
                        if !seen(token) {
                            add(token, beta);
                        }
                    }
                    SyntheticCheck::AvoidToken { token } => {
                        if !seen(token) {
                            add(token, beta);
                        }
                    }
                    SyntheticCheck::OrderedPair { first, second } => {
                        if !seen(first) {
                            add(first, beta);
                            add(second, -beta);
                        } else if !seen(second) {
                            add(second, beta);
                        }
                    }
                    SyntheticCheck::StartsWith { token } => {
                        if content.is_empty() {
                            add(token, beta);
                        }
                    }
                    SyntheticCheck::LengthAtLeast { min } => {
                        if content.len() < min {
                            add(EOS, -beta);
                        }
                    }
                    SyntheticCheck::LengthAtMost { max } => {
                        if content.len() >= max {
                            add(EOS, beta);
                        }
                    }
                },
                Rule::Discourage(check) => match check {
                    SyntheticCheck::ContainsToken { token }
                    | SyntheticCheck::AvoidToken { token } => add(token, -beta),
                    SyntheticCheck::OrderedPair { first, second } => {
                        if seen(first) && !seen(second) {
                            add(second, -beta);
                        }
                    }
                    SyntheticCheck::StartsWith { token } => {
                        if content.is_empty() {
                            add(token, -beta);
                        }
                    }
                    SyntheticCheck::LengthAtLeast { min } => {
                        if content.len() + 1 >= min {
                            add(EOS, beta);
                        }
                    }
                    SyntheticCheck::LengthAtMost { max } => {
                        if content.len() >= max {
                            add(EOS, -beta);
                        }
                    }
                },
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crit(points: f64, check: SyntheticCheck) -> Criterion {
        Criterion::new("c", check.describe(), points).with_check(check)
    }

    #[test]
    fn empty_subset_is_zero_bias() {
        let b = GuidanceBias::from_subset(&[], 2.0);
        assert!(b.is_zero());
        let mut l = vec![0.5; 8];
        b.apply(&[1, 2], &mut l);
        assert_eq!(l, vec![0.5; 8]);
    }

    #[test]
    fn positive_and_negative_token_hints() {
        let b = GuidanceBias::from_subset(
            &[
                crit(5.0, SyntheticCheck::ContainsToken { token: 3 }),
                crit(-2.0, SyntheticCheck::AvoidToken { token: 4 }),
            ],
            2.0,
        );
        let mut l = vec![0.0; 8];
        b.apply(&[], &mut l);
        assert_eq!(l[3], 2.0);
        assert_eq!(l[4], -2.0);
        // Once satisfied, the inclusion hint switches off; the avoidance stays.
        let mut l = vec![0.0; 8];
        b.apply(&[3], &mut l);
        assert_eq!(l[3], 0.0);
        assert_eq!(l[4], -2.0);
    }

    #[test]
    fn ordered_pair_shapes_order() {
        let b = GuidanceBias::from_subset(
            &[crit(1.0, SyntheticCheck::OrderedPair { first: 2, second: 5 })],
            1.5,
        );
        let mut l = vec![0.0; 8];
        b.apply(&[], &mut l);
        assert_eq!((l[2], l[5]), (1.5, -1.5));
        let mut l = vec![0.0; 8];
        b.apply(&[2], &mut l);
        assert_eq!((l[2], l[5]), (0.0, 1.5));
    }

    #[test]
    fn length_hints_act_on_end_marker() {
        let b = GuidanceBias::from_subset(
            &[
                crit(1.0, SyntheticCheck::LengthAtLeast { min: 3 }),
                crit(1.0, SyntheticCheck::LengthAtMost { max: 4 }),
            ],
            1.0,
        );
        let mut l = vec![0.0; 8];
        b.apply(&[1], &mut l);
        assert_eq!(l[EOS as usize], -1.0);
        let mut l = vec![0.0; 8];
        b.apply(&[1, 1, 1, 1], &mut l);
        assert_eq!(l[EOS as usize], 1.0);
    }

    #[test]
    fn free_text_criteria_add_nothing() {
        let b = GuidanceBias::from_subset(&[Criterion::new("c", "be polite", 3.0)], 2.0);
        assert!(b.is_zero());
    }
}
