//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "mm1-k0"
//! seeds = 10
//! max_steps = 1_000_000
//!
//! [environment]
//! kind = "mm1"
//! lambda = 0.7
//! k = 0
//!
//! [estimator]
//! kind = "sage"
//! ```
//!
//! Unknown keys are rejected. Omitted sections fall back to the defaults
//! documented on each field.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use sage_core::environments::ising::IsingState;
use sage_core::{
    BlockPolicy, Estimator, Ising, IsingParams, LbParams, LoadBalancing, Mm1, Mm1Params, PolicyParams, RecordStride,
    RegularizerConfig, ScheduleConfig,
};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Used for the output subdirectory; defaults to the config file stem.
    #[serde(default)]
    pub name: Option<String>,
    /// Number of seeds; runs use `first_seed .. first_seed + seeds`.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Keep every n-th epoch. When absent, epochs are kept at log-spaced
    /// counts with ratio `record_ratio`.
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default = "default_record_ratio")]
    pub record_ratio: f64,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub regularizer: Option<RegularizerSection>,
    /// Initial parameters; zeros when absent.
    #[serde(default)]
    pub initial_theta: Option<Vec<f64>>,
}

fn default_seeds() -> u64 {
    10
}

fn default_max_steps() -> u64 {
    1_000_000
}

fn default_record_ratio() -> f64 {
    1.25
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    Mm1 {
        lambda: f64,
        #[serde(default = "one")]
        mu: f64,
        #[serde(default = "five")]
        gamma: f64,
        #[serde(default = "one")]
        eta: f64,
        #[serde(default)]
        k: usize,
        #[serde(default)]
        initial_queue: u64,
    },
    /// Either explicit `mu`, `lambda` and `capacity`, or the pooled layout
    /// given by `servers` and `delta` (four pools with rates `δ^0..δ^3`,
    /// `λ = load · Σ μ`, capacity `10 n / 4`).
    LoadBalancing {
        #[serde(default)]
        mu: Option<Vec<f64>>,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        capacity: Option<u32>,
        #[serde(default)]
        servers: Option<usize>,
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default)]
        load: Option<f64>,
    },
    Ising {
        #[serde(default = "ten")]
        d1: usize,
        #[serde(default = "twenty")]
        d2: usize,
        #[serde(default = "one")]
        coupling: f64,
        #[serde(default = "one")]
        moment: f64,
        #[serde(default = "minus_one")]
        xi_left: f64,
        #[serde(default = "one")]
        xi_right: f64,
        #[serde(default)]
        initial: IsingStart,
    },
}

fn one() -> f64 {
    1.0
}
fn minus_one() -> f64 {
    -1.0
}
fn five() -> f64 {
    5.0
}
fn ten() -> usize {
    10
}
fn twenty() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsingStart {
    /// Left half `+1`, right half `−1`.
    #[default]
    Split,
    AllUp,
    AllDown,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    #[default]
    Sage,
    SageMemory {
        nu: f64,
    },
    ActorCritic {
        #[serde(default = "critic_rate")]
        alpha_v: f64,
        #[serde(default = "critic_rate")]
        alpha_rbar: f64,
    },
}

fn critic_rate() -> f64 {
    1e-2
}

impl EstimatorConfig {
    pub fn to_core(&self) -> Estimator<f64> {
        match *self {
            EstimatorConfig::Sage => Estimator::Sage,
            EstimatorConfig::SageMemory { nu } => Estimator::SageMemory { nu },
            EstimatorConfig::ActorCritic { alpha_v, alpha_rbar } => Estimator::ActorCritic { alpha_v, alpha_rbar },
        }
    }

    /// Constant step 0.1 and batch 100 for the SAGE variants, step `1e-3`
    /// and batch 1 for actor–critic.
    fn default_step_and_batch(&self) -> (f64, f64) {
        match self {
            EstimatorConfig::ActorCritic { .. } => (1e-3, 1.0),
            _ => (0.1, 100.0),
        }
    }
}

/// Any omitted field takes the estimator's constant-schedule default.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub ell: Option<f64>,
    pub kappa: Option<f64>,
    pub min_batch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSection {
    pub b: f64,
    /// One row of action probabilities per policy block; uniform when absent.
    #[serde(default)]
    pub ref_policy: Option<Vec<Vec<f64>>>,
    /// Block weights; uniform when absent.
    #[serde(default)]
    pub zeta: Option<Vec<f64>>,
}

/// A validated environment ready to simulate.
#[derive(Debug, Clone)]
pub enum ConfiguredEnvironment {
    Mm1 { env: Mm1<f64>, initial: u64 },
    LoadBalancing { env: LoadBalancing<f64> },
    Ising { env: Ising<f64>, initial: IsingState },
}

impl ConfiguredEnvironment {
    pub fn num_params(&self) -> usize {
        use sage_core::Environment;
        match self {
            ConfiguredEnvironment::Mm1 { env, .. } => env.num_params(),
            ConfiguredEnvironment::LoadBalancing { env } => env.num_params(),
            ConfiguredEnvironment::Ising { env, .. } => env.num_params(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConfiguredEnvironment::Mm1 { .. } => "mm1",
            ConfiguredEnvironment::LoadBalancing { .. } => "load_balancing",
            ConfiguredEnvironment::Ising { .. } => "ising",
        }
    }

    fn block_policy(&self) -> Option<&dyn BlockPolicy<f64>> {
        use sage_core::Environment;
        match self {
            ConfiguredEnvironment::Mm1 { env, .. } => env.block_policy(),
            ConfiguredEnvironment::LoadBalancing { env } => env.block_policy(),
            ConfiguredEnvironment::Ising { env, .. } => env.block_policy(),
        }
    }
}

/// Everything a run needs, fully validated.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub name: String,
    pub seeds: Vec<u64>,
    pub max_steps: u64,
    pub output_dir: Option<PathBuf>,
    pub record: RecordStride,
    pub environment: ConfiguredEnvironment,
    pub estimator: Estimator<f64>,
    pub schedule: ScheduleConfig<f64>,
    pub regularizer: Option<RegularizerConfig<f64>>,
    pub theta0: PolicyParams<f64>,
}

fn invalid(section: &str, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Validation(format!("{section}: {e}"))
}

impl EnvironmentConfig {
    pub fn build(&self) -> Result<ConfiguredEnvironment> {
        let section = "environment";
        match *self {
            EnvironmentConfig::Mm1 {
                lambda,
                mu,
                gamma,
                eta,
                k,
                initial_queue,
            } => {
                let params = Mm1Params::new(lambda, mu, gamma, eta, k).map_err(|e| invalid(section, e))?;
                Ok(ConfiguredEnvironment::Mm1 {
                    env: Mm1::new(params),
                    initial: initial_queue,
                })
            }
            EnvironmentConfig::LoadBalancing {
                ref mu,
                lambda,
                capacity,
                servers,
                delta,
                load,
            } => {
                let params = match (mu, servers) {
                    (Some(mu), None) => {
                        if delta.is_some() || load.is_some() {
                            return Err(invalid(
                                section,
                                "delta and load only apply to the pooled layout (servers = n)",
                            ));
                        }
                        let lambda =
                            lambda.ok_or_else(|| invalid(section, "lambda is required with an explicit mu list"))?;
                        let capacity = capacity
                            .ok_or_else(|| invalid(section, "capacity is required with an explicit mu list"))?;
                        LbParams::new(capacity, lambda, mu.clone())
                    }
                    (None, Some(n)) => {
                        if lambda.is_some() || capacity.is_some() {
                            return Err(invalid(section, "lambda and capacity are derived in the pooled layout"));
                        }
                        LbParams::pools(n, delta.unwrap_or(1.0), load.unwrap_or(0.7))
                    }
                    (Some(_), Some(_)) => return Err(invalid(section, "give either mu or servers, not both")),
                    (None, None) => return Err(invalid(section, "one of mu or servers is required")),
                }
                .map_err(|e| invalid(section, e))?;
                Ok(ConfiguredEnvironment::LoadBalancing {
                    env: LoadBalancing::new(params),
                })
            }
            EnvironmentConfig::Ising {
                d1,
                d2,
                coupling,
                moment,
                xi_left,
                xi_right,
                initial,
            } => {
                let params =
                    IsingParams::new(d1, d2, coupling, moment, xi_left, xi_right).map_err(|e| invalid(section, e))?;
                let start = match initial {
                    IsingStart::Split => IsingState::split(&params, 0),
                    IsingStart::AllUp => IsingState::uniform(d1, d2, 1, 0),
                    IsingStart::AllDown => IsingState::uniform(d1, d2, -1, 0),
                }
                .map_err(|e| invalid(section, e))?;
                Ok(ConfiguredEnvironment::Ising {
                    env: Ising::new(params),
                    initial: start,
                })
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Validation(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.name.is_none() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<ScheduleConfig<f64>> {
        let (alpha, batch) = self.estimator.default_step_and_batch();
        let s = &self.schedule;
        let min_batch = s.min_batch.unwrap_or(match self.estimator {
            EstimatorConfig::Sage => 2,
            _ => 1,
        });
        ScheduleConfig::new(
            s.alpha.unwrap_or(alpha),
            s.sigma.unwrap_or(0.0),
            s.ell.unwrap_or(batch),
            s.kappa.unwrap_or(0.0),
            min_batch,
        )
        .map_err(|e| invalid("schedule", e))
    }

    /// Validates every section and resolves defaults.
    pub fn resolve(&self) -> Result<RunSetup> {
        if self.seeds == 0 {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps", "must be positive"));
        }
        let record = match self.record_every {
            Some(0) => return Err(invalid("record_every", "must be positive")),
            Some(n) => RecordStride::Epochs(n),
            None if self.record_ratio > 1.0 && self.record_ratio.is_finite() => {
                RecordStride::LogSpaced(self.record_ratio)
            }
            None => {
                return Err(invalid(
                    "record_ratio",
                    format!("must exceed 1, got {}", self.record_ratio),
                ))
            }
        };
        match self.estimator {
            EstimatorConfig::SageMemory { nu } if !(0.0..=1.0).contains(&nu) => {
                return Err(invalid("estimator", format!("nu must lie in [0, 1], got {nu}")));
            }
            EstimatorConfig::ActorCritic { alpha_v, alpha_rbar } if !(alpha_v > 0.0 && alpha_rbar > 0.0) => {
                return Err(invalid("estimator", "alpha_v and alpha_rbar must be positive"));
            }
            _ => {}
        }
        let environment = self.environment.build()?;
        let schedule = self.schedule()?;
        if matches!(self.estimator, EstimatorConfig::Sage) && schedule.min_batch < 2 {
            return Err(invalid("schedule", "the sage estimator needs min_batch >= 2"));
        }
        let n = environment.num_params();
        let theta0 = match &self.initial_theta {
            Some(t) if t.len() != n => {
                return Err(invalid(
                    "initial_theta",
                    format!("{} values given, environment has {n} parameters", t.len()),
                ))
            }
            Some(t) => PolicyParams::new(t.clone()).map_err(|e| invalid("initial_theta", e))?,
            None => PolicyParams::zeros(n),
        };
        let regularizer = match &self.regularizer {
            None => None,
            Some(r) => {
                let block = environment.block_policy().ok_or_else(|| {
                    invalid(
                        "regularizer",
                        format!("not supported for the {} environment", environment.kind()),
                    )
                })?;
                let actions = block.num_actions();
                let blocks = block.num_blocks();
                let ref_policy = r
                    .ref_policy
                    .clone()
                    .unwrap_or_else(|| vec![vec![1.0 / actions as f64; actions]; blocks]);
                if ref_policy.len() != blocks || ref_policy.iter().any(|row| row.len() != actions) {
                    return Err(invalid(
                        "regularizer",
                        format!("ref_policy must be {blocks} rows of {actions} probabilities"),
                    ));
                }
                let zeta = r.zeta.clone().unwrap_or_else(|| vec![1.0 / blocks as f64; blocks]);
                Some(RegularizerConfig::new(r.b, ref_policy, zeta).map_err(|e| invalid("regularizer", e))?)
            }
        };
        Ok(RunSetup {
            name: self.name.clone().unwrap_or_else(|| "experiment".into()),
            seeds: (self.first_seed..self.first_seed + self.seeds).collect(),
            max_steps: self.max_steps,
            output_dir: self.output_dir.clone(),
            record,
            environment,
            estimator: self.estimator.to_core(),
            schedule,
            regularizer,
            theta0,
        })
    }
}
