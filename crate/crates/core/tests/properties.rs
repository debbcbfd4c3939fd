//! Cross-module invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scaffold_core::dataset::{load_dataset, write_dataset};
use scaffold_core::grader::{Grader, GraderBackend, MockTable, Response};
use scaffold_core::policy::{log_prob, sample_response, GuidanceBias, PolicyParams, SamplingConfig};
use scaffold_core::scaffold::{
    group_ratios, integrated_ratios, sample_subset, step_ratio, subset_size, ScaffoldConfig,
};
use scaffold_core::synthenv::{generate_tasks, oracle_reward, uniform_random_response, SynthTaskSpec};
use scaffold_core::{score, DecayFamily, IntraGroupMode, TokenSeq};

fn decay_strategy() -> impl Strategy<Value = DecayFamily> {
    prop_oneof![
        (1.0f64..300.0, 0.0f64..1.0).prop_map(|(alpha, t0)| DecayFamily::Sigmoid { alpha, t0 }),
        Just(DecayFamily::Linear),
        (0.1f64..8.0).prop_map(|n| DecayFamily::Power { n }),
    ]
}

proptest! {
    #[test]
    fn step_ratio_is_non_increasing(decay in decay_strategy(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(step_ratio(lo, &decay) >= step_ratio(hi, &decay));
    }

    #[test]
    fn integrated_ratios_factorize_and_stay_in_range(
        decay in decay_strategy(),
        t in 0.0f64..=1.0,
        g in 1usize..=16,
    ) {
        let cfg = ScaffoldConfig { decay, ..ScaffoldConfig::default() };
        let step = step_ratio(t, &cfg.decay);
        let group = group_ratios(g, IntraGroupMode::Linear).unwrap();
        let integrated = integrated_ratios(t, g, &cfg).unwrap();
        for (x, y) in integrated.iter().zip(&group) {
            prop_assert!((x - step * y).abs() <= 1e-15);
            prop_assert!((0.0..=1.0).contains(x));
        }
        if g >= 2 {
            prop_assert!(group.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn subsets_have_the_rounded_size_and_keep_rubric_order(
        seed in 0u64..500,
        lambda in 0.0f64..=1.0,
    ) {
        let tasks = generate_tasks(&SynthTaskSpec { seed, task_count: 1, ..SynthTaskSpec::default() }).unwrap();
        let rubric = &tasks[0].rubric;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let subset = sample_subset(rubric, lambda, &mut rng);
        prop_assert_eq!(subset.len(), subset_size(lambda, rubric.len()));
        let positions: Vec<usize> = subset.iter().map(|c| rubric.position(&c.id).unwrap()).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn log_prob_ignores_the_bias_that_sampled_the_sequence(seed in 0u64..200, beta in 0.0f64..6.0) {
        let tasks = generate_tasks(&SynthTaskSpec { seed, task_count: 1, ..SynthTaskSpec::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PolicyParams::random(1, 32, 16, 1.0, &mut rng);
        let bias = GuidanceBias::from_subset(tasks[0].rubric.criteria(), beta);
        let seq = sample_response(&params, 0, &bias, &SamplingConfig::default(), &mut rng);
        let plain = log_prob(&params, 0, &seq);
        let copy = TokenSeq { tokens: seq.tokens.clone(), terminated: seq.terminated };
        prop_assert_eq!(plain, log_prob(&params, 0, &copy));
    }
}

#[test]
fn subset_extremes_at_integrated_endpoints() {
    let tasks = generate_tasks(&SynthTaskSpec::default()).unwrap();
    let cfg = ScaffoldConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let early = integrated_ratios(0.0, 8, &cfg).unwrap();
    let late = integrated_ratios(1.0, 8, &cfg).unwrap();
    for task in &tasks {
        assert_eq!(sample_subset(&task.rubric, early[0], &mut rng).len(), task.rubric.len());
        assert!(sample_subset(&task.rubric, early[7], &mut rng).is_empty());
        for &l in &late {
            assert!(sample_subset(&task.rubric, l, &mut rng).is_empty());
        }
    }
}

#[test]
fn harder_suites_are_harder_for_a_random_policy() {
    // Mean reward of uniform random responses should not rise when every
    // task gets more criteria. Penalty-free suites only: with penalties,
    // dividing by the positive total shrinks their relative weight as
    // rubrics grow.
    let mean_reward = |min_criteria: usize, max_criteria: usize| {
        let mut total = 0.0;
        let mut n = 0usize;
        for seed in 0..6 {
            let spec = SynthTaskSpec {
                seed,
                task_count: 32,
                min_criteria,
                max_criteria,
                negative_fraction: 0.0,
                ..SynthTaskSpec::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for task in generate_tasks(&spec).unwrap() {
                for _ in 0..20 {
                    let r = uniform_random_response(spec.vocab_size, spec.max_length, &mut rng);
                    total += oracle_reward(&r, &task).unwrap();
                    n += 1;
                }
            }
        }
        total / n as f64
    };
    let easy = mean_reward(2, 2);
    let medium = mean_reward(5, 5);
    let hard = mean_reward(10, 10);
    assert!(easy + 0.02 >= medium, "easy {easy} medium {medium}");
    assert!(medium + 0.02 >= hard, "medium {medium} hard {hard}");
}

#[test]
fn oracle_grading_is_stable_under_parallelism_and_reevaluation() {
    let tasks = generate_tasks(&SynthTaskSpec::default()).unwrap();
    let serial = Grader::oracle();
    let parallel = Grader::new(GraderBackend::Oracle, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for task in &tasks {
        for _ in 0..10 {
            let r = Response::from_tokens(&uniform_random_response(32, 16, &mut rng));
            let a = serial.grade_rubric(task, &r).unwrap();
            let b = parallel.grade_rubric(task, &r).unwrap();
            let c = serial.grade_rubric(task, &r).unwrap();
            assert_eq!(a.met, b.met);
            assert_eq!(a.met, c.met);
        }
    }
}

#[test]
fn witnesses_survive_a_dataset_round_trip() {
    let tasks = generate_tasks(&SynthTaskSpec { seed: 11, ..SynthTaskSpec::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suite.jsonl");
    write_dataset(&path, &tasks).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert_eq!(loaded, tasks);
    let grader = Grader::oracle();
    for task in &loaded {
        let w = task.witness.as_ref().unwrap();
        let j = grader.grade_rubric(task, &Response::from_tokens(w)).unwrap();
        assert_eq!(score(&j, &task.rubric).unwrap().reward, 1.0);
    }
}

#[test]
fn mock_backend_replays_oracle_verdicts() {
    let tasks = generate_tasks(&SynthTaskSpec { task_count: 3, ..SynthTaskSpec::default() }).unwrap();
    let mut table = MockTable::default();
    for task in &tasks {
        let w = task.witness.as_ref().unwrap();
        let j = Grader::oracle().grade_rubric(task, &Response::from_tokens(w)).unwrap();
        for (c, met) in task.rubric.criteria().iter().zip(&j.met) {
            table.insert(&task.task_id, &c.id, *met);
        }
    }
    let mock = Grader::new(GraderBackend::Mock(table), 2).unwrap();
    for task in &tasks {
        let j = mock.grade_rubric(task, &Response::from_text("ignored")).unwrap();
        assert_eq!(score(&j, &task.rubric).unwrap().reward, 1.0);
    }
}
