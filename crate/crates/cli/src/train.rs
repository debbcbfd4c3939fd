//! `train`, `ablate` and `schedule`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use scaffold_core::policy::checkpoint;
use scaffold_core::scaffold::{integrated_ratios, step_ratio};
use scaffold_core::trainer::{initial_params, train_from, HistoryWriter, TrainOutcome};
use scaffold_core::{DecayFamily, IntraGroupMode, TrainConfig, TrainHistory};

use crate::config::{config_err, parse_decay, parse_intra, with_sigmoid, BackendKind, RunConfig};

#[derive(Debug, Serialize)]
struct Summary {
    steps: usize,
    final_eval_reward: Option<f64>,
    best_eval_reward: Option<f64>,
    dropped_groups: usize,
}

fn best_eval(history: &TrainHistory) -> Option<f64> {
    history
        .records
        .iter()
        .filter_map(|r| r.eval_reward)
        .chain(history.final_eval_reward)
        .reduce(f64::max)
}

/// `step,t,lambda_step,lambda_1..lambda_G` for every planned step.
pub fn schedule_table(train: &TrainConfig, steps: usize) -> anyhow::Result<String> {
    let g = train.group_size;
    let mut out = String::from("step,t,lambda_step");
    for i in 1..=g {
        out.push_str(&format!(",lambda_{i}"));
    }
    out.push('\n');
    for step in 0..steps {
        let t = step as f64 / steps as f64;
        out.push_str(&format!("{step},{t},{}", step_ratio(t, &train.scaffold.decay)));
        for l in integrated_ratios(t, g, &train.scaffold)? {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn checkpoint_path(dir: &Path, step: usize) -> std::path::PathBuf {
    dir.join("checkpoints").join(format!("step-{step:06}.json"))
}

/// One training run writing every artifact under `dir`.
pub fn run_training(cfg: &RunConfig, dir: &Path) -> anyhow::Result<TrainOutcome> {
    cfg.validate_for_training()?;
    let tasks = cfg.load_tasks()?;
    cfg.persist(dir)?;
    if cfg.synthetic.is_some() {
        scaffold_core::dataset::write_dataset(&dir.join("dataset.jsonl"), &tasks)?;
    }
    let transcript = (cfg.grader.backend == BackendKind::Llm).then(|| dir.join("judge_transcript.jsonl"));
    let grader = cfg.grader(transcript.as_deref())?;

    let init = initial_params(&cfg.train, &tasks).map_err(|e| config_err(e.to_string()))?;
    fs::create_dir_all(dir.join("checkpoints"))?;
    checkpoint::save(&init, &checkpoint_path(dir, 0))?;

    let total = cfg.train.planned_steps(tasks.len());
    let mut writer = HistoryWriter::new(BufWriter::new(File::create(dir.join("history.jsonl"))?));
    let every = cfg.checkpoint_every;
    let outcome = train_from(&cfg.train, &tasks, &grader, init, |record, params| {
        writer.write(record)?;
        let done = record.step + 1;
        if every > 0 && done % every == 0 && done < total {
            checkpoint::save(params, &checkpoint_path(dir, done))?;
        }
        if let Some(eval) = record.eval_reward {
            eprintln!(
                "step {:>5}/{total}  lambda_step {:.4}  rollout reward {:.4}  eval reward {eval:.4}",
                record.step, record.lambda_step, record.mean_reward
            );
        }
        Ok(())
    })?;

    checkpoint::save(&outcome.params, &checkpoint_path(dir, total))?;
    checkpoint::save(&outcome.params, &dir.join("final.json"))?;
    fs::write(dir.join("metrics.csv"), outcome.history.metrics_csv())?;
    fs::write(dir.join("schedule.csv"), schedule_table(&cfg.train, total)?)?;
    let summary = Summary {
        steps: outcome.history.records.len(),
        final_eval_reward: outcome.history.final_eval_reward,
        best_eval_reward: best_eval(&outcome.history),
        dropped_groups: outcome.history.records.iter().map(|r| r.dropped_groups).sum(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(outcome)
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = cfg.out_dir("train");
    let outcome = run_training(cfg, &dir)?;
    if let Some(r) = outcome.history.final_eval_reward {
        println!("final_eval_reward {r}");
    }
    println!("run directory {}", dir.display());
    Ok(())
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct SweepArgs {
    /// Intra-group modes, e.g. `linear,binary:0,binary:4`.
    #[arg(long, value_delimiter = ',')]
    pub intra_values: Vec<String>,
    /// Decay families, e.g. `sigmoid,constant,power:2`.
    #[arg(long, value_delimiter = ',')]
    pub decays: Vec<String>,
    /// Sigmoid midpoints applied to every sigmoid decay.
    #[arg(long, value_delimiter = ',')]
    pub t0_values: Vec<f64>,
    /// Sigmoid steepness values applied to every sigmoid decay.
    #[arg(long, value_delimiter = ',')]
    pub alpha_values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub intra: IntraGroupMode,
    pub decay: DecayFamily,
}

/// Cartesian product of the sweep; axes left empty keep the config value.
pub fn sweep_cells(base: &TrainConfig, sweep: &SweepArgs) -> anyhow::Result<Vec<Cell>> {
    let intras = if sweep.intra_values.is_empty() {
        vec![base.scaffold.intra]
    } else {
        sweep.intra_values.iter().map(|s| parse_intra(s)).collect::<anyhow::Result<_>>()?
    };
    let decays = if sweep.decays.is_empty() {
        vec![base.scaffold.decay]
    } else {
        sweep.decays.iter().map(|s| parse_decay(s)).collect::<anyhow::Result<_>>()?
    };
    let sigmoid_axes = !sweep.t0_values.is_empty() || !sweep.alpha_values.is_empty();
    if sigmoid_axes && !decays.iter().any(|d| matches!(d, DecayFamily::Sigmoid { .. })) {
        return Err(config_err("--t0-values/--alpha-values need a sigmoid decay in the sweep"));
    }
    let opt_axis = |v: &[f64]| -> Vec<Option<f64>> {
        if v.is_empty() {
            vec![None]
        } else {
            v.iter().copied().map(Some).collect()
        }
    };
    let mut cells = Vec::new();
    for &intra in &intras {
        for &decay in &decays {
            if matches!(decay, DecayFamily::Sigmoid { .. }) {
                for alpha in opt_axis(&sweep.alpha_values) {
                    for t0 in opt_axis(&sweep.t0_values) {
                        let d = with_sigmoid(decay, alpha, t0)?;
                        d.validate()?;
                        cells.push(Cell { intra, decay: d });
                    }
                }
            } else {
                cells.push(Cell { intra, decay });
            }
        }
    }
    Ok(cells)
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs every cell with the shared seed; failed cells are marked and the
/// sweep continues.
pub fn cmd_ablate(cfg: &RunConfig, sweep: &SweepArgs) -> anyhow::Result<()> {
    cfg.validate_for_training()?;
    let cells = sweep_cells(&cfg.train, sweep)?;
    let configs: Vec<RunConfig> = cells
        .iter()
        .map(|c| {
            let mut run = cfg.clone();
            run.train.scaffold.intra = c.intra;
            run.train.scaffold.decay = c.decay;
            run.validate_for_training().map(|_| run)
        })
        .collect::<anyhow::Result<_>>()?;

    let dir = cfg.out_dir("ablate");
    cfg.persist(&dir)?;
    let mut table = String::from("cell,intra,decay,final_eval_reward,best_eval_reward,status\n");
    let mut first_failure: Option<anyhow::Error> = None;
    let mut failures = 0;
    for (i, (cell, run)) in cells.iter().zip(&configs).enumerate() {
        let cell_dir = dir.join(format!("cell-{i:02}"));
        eprintln!("cell {i}: intra {} decay {}", cell.intra, cell.decay.label());
        let row = match run_training(run, &cell_dir) {
            Ok(o) => format!(
                "{},{},ok",
                csv_opt(o.history.final_eval_reward),
                csv_opt(best_eval(&o.history))
            ),
            Err(e) => {
                failures += 1;
                let msg = format!("{e:#}").replace([',', '\n'], ";");
                first_failure.get_or_insert(e);
                format!(",,failed: {msg}")
            }
        };
        table.push_str(&format!("{i},{},\"{}\",{row}\n", cell.intra, cell.decay.label()));
    }
    fs::write(dir.join("ablation.csv"), &table)?;
    print!("{table}");
    match first_failure {
        None => Ok(()),
        Some(e) => Err(e.context(format!("{failures} of {} ablation cells failed", cells.len()))),
    }
}

pub fn cmd_schedule(cfg: &RunConfig, steps: Option<usize>) -> anyhow::Result<()> {
    cfg.train.validate()?;
    let steps = match (steps, cfg.train.total_steps, &cfg.synthetic, &cfg.dataset) {
        (Some(s), ..) | (None, Some(s), ..) => s,
        (None, None, Some(spec), _) => cfg.train.planned_steps(spec.task_count),
        (None, None, None, Some(_)) => cfg.train.planned_steps(cfg.load_tasks()?.len()),
        (None, None, None, None) => {
            return Err(config_err("pass --steps, or a dataset to derive the step count from"))
        }
    };
    if steps == 0 {
        return Err(config_err("--steps must be positive"));
    }
    print!("{}", schedule_table(&cfg.train, steps).context("rendering schedule")?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let base = TrainConfig::desk();
        let sweep = SweepArgs {
            intra_values: vec!["linear".into(), "binary:0".into(), "binary:4".into(), "binary:8".into()],
            ..SweepArgs::default()
        };
        assert_eq!(sweep_cells(&base, &sweep).unwrap().len(), 4);
        let sweep = SweepArgs {
            t0_values: vec![0.05, 0.2, 0.5],
            ..SweepArgs::default()
        };
        let cells = sweep_cells(&base, &sweep).unwrap();
        let t0s: Vec<f64> = cells
            .iter()
            .map(|c| match c.decay {
                DecayFamily::Sigmoid { alpha, t0 } => {
                    assert_eq!(alpha, 125.0);
                    t0
                }
                _ => panic!("expected sigmoid"),
            })
            .collect();
        assert_eq!(t0s, vec![0.05, 0.2, 0.5]);
        let sweep = SweepArgs {
            decays: vec!["constant".into()],
            t0_values: vec![0.1],
            ..SweepArgs::default()
        };
        assert!(sweep_cells(&base, &sweep).is_err());
    }

    #[test]
    fn schedule_rows_match_the_integrated_ratios() {
        let table = schedule_table(&TrainConfig::desk(), 10).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 11);
        assert!(lines[0].ends_with("lambda_8"));
        let first: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(first[3], first[2]);
        assert_eq!(first[10], 0.0);
    }
}
