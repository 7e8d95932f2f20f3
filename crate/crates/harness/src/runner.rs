//! Seeded multi-run execution and CSV output.
//!
//! Each seed writes `seed_<s>.csv` with one [`ResultRow`] per recorded epoch;
//! `aggregate.csv` holds the per-epoch mean and population standard
//! deviation across seeds. Both files start with a `# sage-results` comment
//! line carrying the schema version.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use sage_core::environments::mm1::mm1_stability_check;
use sage_core::exact_eval::{
    ising_exact_objective, lb_exact_objective, mm1_exact_objective, ISING_ENUMERATION_MAX_SITES,
};
use sage_core::optimizer::run_policy_gradient;
use sage_core::{Environment, PolicyParams, RunOptions, RunOutcome};

use crate::config::{ConfiguredEnvironment, RunSetup};
use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the output directory named in the configuration.
pub const OUTPUT_DIR_ENV: &str = "SAGE_OUTPUT_DIR";

pub const DEFAULT_OUTPUT_DIR: &str = "results";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
    pub exact_objective: Option<f64>,
    pub running_avg_reward: f64,
    pub theta_norm: f64,
    pub stable: bool,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<ResultRow>,
    pub outcome: RunOutcome,
    pub final_theta: PolicyParams<f64>,
    pub total_steps: u64,
}

impl SeedResult {
    pub fn final_row(&self) -> Option<&ResultRow> {
        self.rows.last()
    }

    pub fn always_stable(&self) -> bool {
        self.rows.iter().all(|r| r.stable)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub epoch: usize,
    pub step: u64,
    pub seeds: usize,
    pub exact_seeds: usize,
    pub exact_mean: Option<f64>,
    pub exact_std: Option<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub theta_norm_mean: f64,
    pub theta_norm_std: f64,
    pub stable_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub seeds: Vec<SeedResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentOutput {
    /// Mean and population standard deviation of the final exact objective
    /// over seeds that have one.
    pub fn final_exact_stats(&self) -> Option<(f64, f64)> {
        let finals: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.final_row().and_then(|r| r.exact_objective))
            .collect();
        mean_std(&finals)
    }

    pub fn final_reward_stats(&self) -> Option<(f64, f64)> {
        let finals: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.final_row().map(|r| r.running_avg_reward))
            .collect();
        mean_std(&finals)
    }

    pub fn failures(&self) -> Vec<(u64, &RunOutcome)> {
        self.seeds
            .iter()
            .filter(|s| s.outcome != RunOutcome::Completed)
            .map(|s| (s.seed, &s.outcome))
            .collect()
    }
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// `J(θ)` for environments with a tractable exact objective.
pub fn exact_objective(configured: &ConfiguredEnvironment, theta: &PolicyParams<f64>) -> Option<f64> {
    match configured {
        ConfiguredEnvironment::Mm1 { env, .. } => mm1_exact_objective(theta, &env.params).ok(),
        ConfiguredEnvironment::LoadBalancing { env } => lb_exact_objective(theta, &env.params).ok(),
        ConfiguredEnvironment::Ising { env, .. } if env.params.sites() <= ISING_ENUMERATION_MAX_SITES => {
            ising_exact_objective(theta, &env.params).ok()
        }
        ConfiguredEnvironment::Ising { .. } => None,
    }
}

/// Positive recurrence of the controlled chain; always true for the finite
/// environments.
pub fn is_stable(configured: &ConfiguredEnvironment, theta: &PolicyParams<f64>) -> bool {
    match configured {
        ConfiguredEnvironment::Mm1 { env, .. } => mm1_stability_check(theta, &env.params),
        _ => true,
    }
}

fn run_env<E: Environment<f64>>(setup: &RunSetup, env: &E, s0: E::State, seed: u64) -> Result<SeedResult> {
    let options = RunOptions {
        max_steps: setup.max_steps,
        seed,
        record: setup.record,
    };
    let record = run_policy_gradient(
        env,
        &setup.estimator,
        &setup.schedule,
        setup.regularizer.as_ref(),
        setup.theta0.clone(),
        s0,
        &options,
    )?;
    let rows = record
        .epochs
        .iter()
        .map(|e| ResultRow {
            seed,
            epoch: e.epoch,
            step: e.step,
            exact_objective: exact_objective(&setup.environment, &e.theta),
            running_avg_reward: e.running_avg_reward,
            theta_norm: e.theta.norm(),
            stable: is_stable(&setup.environment, &e.theta),
            theta: e.theta.as_slice().to_vec(),
        })
        .collect();
    Ok(SeedResult {
        seed,
        rows,
        outcome: record.outcome,
        final_theta: record.final_theta,
        total_steps: record.total_steps,
    })
}

pub fn run_seed(setup: &RunSetup, seed: u64) -> Result<SeedResult> {
    match &setup.environment {
        ConfiguredEnvironment::Mm1 { env, initial } => run_env(setup, env, *initial, seed),
        ConfiguredEnvironment::LoadBalancing { env } => run_env(setup, env, env.empty_state(), seed),
        ConfiguredEnvironment::Ising { env, initial } => run_env(setup, env, initial.clone(), seed),
    }
}

/// Runs every seed (in parallel) and aggregates. Nothing is written.
pub fn run_experiment(setup: &RunSetup) -> Result<ExperimentOutput> {
    let seeds = setup
        .seeds
        .par_iter()
        .map(|&seed| run_seed(setup, seed))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&seeds);
    Ok(ExperimentOutput { seeds, aggregate })
}

pub fn aggregate(seeds: &[SeedResult]) -> Vec<AggregateRow> {
    let mut by_epoch: BTreeMap<usize, Vec<&ResultRow>> = BTreeMap::new();
    for row in seeds.iter().flat_map(|s| &s.rows) {
        by_epoch.entry(row.epoch).or_default().push(row);
    }
    by_epoch
        .into_iter()
        .map(|(epoch, rows)| {
            let exact: Vec<f64> = rows.iter().filter_map(|r| r.exact_objective).collect();
            let rewards: Vec<f64> = rows.iter().map(|r| r.running_avg_reward).collect();
            let norms: Vec<f64> = rows.iter().map(|r| r.theta_norm).collect();
            let (reward_mean, reward_std) = mean_std(&rewards).unwrap_or((f64::NAN, f64::NAN));
            let (theta_norm_mean, theta_norm_std) = mean_std(&norms).unwrap_or((f64::NAN, f64::NAN));
            let exact_stats = mean_std(&exact);
            AggregateRow {
                epoch,
                step: rows[0].step,
                seeds: rows.len(),
                exact_seeds: exact.len(),
                exact_mean: exact_stats.map(|s| s.0),
                exact_std: exact_stats.map(|s| s.1),
                reward_mean,
                reward_std,
                theta_norm_mean,
                theta_norm_std,
                stable_fraction: rows.iter().filter(|r| r.stable).count() as f64 / rows.len() as f64,
            }
        })
        .collect()
}

/// `--out` beats the environment variable, which beats the config file.
pub fn resolve_output_dir(cli: Option<&Path>, setup: &RunSetup) -> PathBuf {
    if let Some(dir) = cli {
        return dir.to_path_buf();
    }
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    setup
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn open_csv(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# sage-results schema_version={SCHEMA_VERSION}").map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::io(path, std::io::Error::other(e))
}

pub fn write_seed_csv(path: &Path, result: &SeedResult) -> Result<()> {
    let mut w = open_csv(path)?;
    let n = result.final_theta.len();
    let mut header: Vec<String> = [
        "seed",
        "epoch",
        "step",
        "exact_objective",
        "running_avg_reward",
        "theta_norm",
        "stability_flag",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..n).map(|i| format!("theta_{i}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in &result.rows {
        let mut rec = vec![
            row.seed.to_string(),
            row.epoch.to_string(),
            row.step.to_string(),
            fmt_opt(row.exact_objective),
            row.running_avg_reward.to_string(),
            row.theta_norm.to_string(),
            u8::from(row.stable).to_string(),
        ];
        rec.extend(row.theta.iter().map(|t| t.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = open_csv(path)?;
    w.write_record([
        "epoch",
        "step",
        "seeds",
        "exact_seeds",
        "exact_objective_mean",
        "exact_objective_std",
        "running_avg_reward_mean",
        "running_avg_reward_std",
        "theta_norm_mean",
        "theta_norm_std",
        "stable_fraction",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            r.seeds.to_string(),
            r.exact_seeds.to_string(),
            fmt_opt(r.exact_mean),
            fmt_opt(r.exact_std),
            r.reward_mean.to_string(),
            r.reward_std.to_string(),
            r.theta_norm_mean.to_string(),
            r.theta_norm_std.to_string(),
            r.stable_fraction.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Writes per-seed and aggregate CSVs under `dir/<name>/`; returns that directory.
pub fn write_outputs(dir: &Path, setup: &RunSetup, output: &ExperimentOutput) -> Result<PathBuf> {
    let target = dir.join(&setup.name);
    std::fs::create_dir_all(&target).map_err(|e| HarnessError::io(&target, e))?;
    for seed in &output.seeds {
        write_seed_csv(&target.join(format!("seed_{}.csv", seed.seed)), seed)?;
    }
    write_aggregate_csv(&target.join("aggregate.csv"), &output.aggregate)?;
    Ok(target)
}
