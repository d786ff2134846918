//! Seed sweeps and their aggregates.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Experiment;
use super::export;
use crate::error::Result;
use crate::runtime::{run, Mode, RunConfig, RunRecord};

/// Per-seed outcome. Contains no timing so that it is reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub completed: bool,
    pub success: bool,
    pub violations: usize,
    /// Mean over agents of the realized cost.
    pub mean_cost: f64,
    pub agent_costs: Vec<f64>,
    pub steps: usize,
    pub degenerate_events: usize,
    pub aborted: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub mean_step_seconds: f64,
    pub mean_agent_solve_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Mean wall-clock seconds per MPC step over all seeds.
    pub mean_runtime: f64,
    pub mean_agent_solve_seconds: f64,
    pub seeds: Vec<SeedTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub scenario: String,
    pub mode: String,
    pub num_agents: usize,
    pub runs: Vec<RunSummary>,
    /// Mean of the per-seed mean costs over seeds that produced a record.
    pub mean_cost: f64,
    /// Unbiased sample variance of the per-seed mean cost (0 for one seed).
    pub cost_variance: f64,
    pub success_rate: f64,
    /// Kept out of `summary.json`; exported to `timing.json`.
    #[serde(skip)]
    pub timing: Timing,
}

pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

impl ResultBundle {
    pub fn from_runs(scenario: String, mode: Mode, num_agents: usize, runs: Vec<RunSummary>, timing: Timing) -> Self {
        let costs: Vec<f64> = runs
            .iter()
            .filter(|r| !r.agent_costs.is_empty())
            .map(|r| r.mean_cost)
            .collect();
        let (mean_cost, cost_variance) = mean_and_variance(&costs);
        let successes = runs.iter().filter(|r| r.success).count();
        let success_rate = if runs.is_empty() {
            0.0
        } else {
            successes as f64 / runs.len() as f64
        };
        Self {
            scenario,
            mode: mode_name(mode).into(),
            num_agents,
            runs,
            mean_cost,
            cost_variance,
            success_rate,
            timing,
        }
    }

    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.completed)
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Distributed => "distributed",
        Mode::Centralized => "centralized",
    }
}

pub fn summarize(seed: u64, record: &RunRecord<f64>) -> RunSummary {
    let n = record.agent_costs.len().max(1) as f64;
    RunSummary {
        seed,
        completed: record.completed(),
        success: record.success,
        violations: record.violations,
        mean_cost: record.agent_costs.iter().sum::<f64>() / n,
        agent_costs: record.agent_costs.clone(),
        steps: record.controls.len(),
        degenerate_events: record.degenerate_events,
        aborted: record.aborted.clone(),
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs every seed of `experiment` with the seeds shifted by `seed_offset`.
/// Seeds that fail are recorded as aborted failures. Outputs go to
/// `out_dir` when given.
pub fn run_experiment(experiment: &Experiment, seed_offset: u64, out_dir: Option<&Path>) -> Result<ResultBundle> {
    let seeds: Vec<u64> = experiment.seeds.iter().map(|s| s.wrapping_add(seed_offset)).collect();
    let outcomes: Vec<(u64, Option<RunRecord<f64>>, RunSummary)> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = RunConfig {
                seed,
                ..experiment.run.clone()
            };
            match run(&cfg) {
                Ok(record) => {
                    let s = summarize(seed, &record);
                    (seed, Some(record), s)
                }
                Err(e) => (
                    seed,
                    None,
                    RunSummary {
                        seed,
                        completed: false,
                        success: false,
                        violations: 0,
                        mean_cost: 0.0,
                        agent_costs: Vec::new(),
                        steps: 0,
                        degenerate_events: 0,
                        aborted: Some(e.to_string()),
                    },
                ),
            }
        })
        .collect();

    let timing = Timing {
        mean_runtime: mean(
            &outcomes
                .iter()
                .filter_map(|(_, r, _)| r.as_ref())
                .flat_map(|r| r.step_seconds.iter().copied())
                .collect::<Vec<_>>(),
        ),
        mean_agent_solve_seconds: mean(
            &outcomes
                .iter()
                .filter_map(|(_, r, _)| r.as_ref())
                .flat_map(|r| r.agent_solve_seconds.iter().copied())
                .collect::<Vec<_>>(),
        ),
        seeds: outcomes
            .iter()
            .map(|(seed, r, _)| SeedTiming {
                seed: *seed,
                mean_step_seconds: r.as_ref().map_or(0.0, |r| mean(&r.step_seconds)),
                mean_agent_solve_seconds: r.as_ref().map_or(0.0, |r| mean(&r.agent_solve_seconds)),
            })
            .collect(),
    };
    let bundle = ResultBundle::from_runs(
        experiment.scenario.label(),
        experiment.run.mode,
        experiment.run.task.num_agents(),
        outcomes.iter().map(|(_, _, s)| s.clone()).collect(),
        timing,
    );
    if let Some(dir) = out_dir {
        let records: Vec<(u64, &RunRecord<f64>)> = outcomes
            .iter()
            .filter_map(|(seed, r, _)| r.as_ref().map(|r| (*seed, r)))
            .collect();
        export::export_bundle(&bundle, &records, &experiment.run.task, dir)?;
        export::write_text(&dir.join("config.toml"), &experiment.file.to_toml())?;
    }
    Ok(bundle)
}
