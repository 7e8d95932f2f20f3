use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sage_core::PolicyParams;
use sage_harness::config::ExperimentConfig;
use sage_harness::error::{HarnessError, Result};
use sage_harness::runner::{exact_objective, is_stable, resolve_output_dir, run_experiment, write_outputs};
use sage_harness::suites::{run_suite, SUITES};

#[derive(Debug, Parser)]
#[command(name = "sage", version, about = "Score-aware policy gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment over several seeds and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Number of seeds (overrides the config).
        #[arg(long)]
        seeds: Option<u64>,
        /// Output directory (overrides SAGE_OUTPUT_DIR and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the exact long-run average reward at a parameter vector.
    EvalExact {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated parameter values.
        #[arg(long, allow_hyphen_values = true)]
        theta: String,
    },
    /// Run a self-check suite.
    Check {
        #[arg(long)]
        suite: String,
    },
    /// List the available self-check suites.
    ListSuites,
}

fn parse_theta(text: &str) -> Result<PolicyParams<f64>> {
    let values = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| HarnessError::Validation(format!("theta: '{}' is not a number ({e})", v.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    PolicyParams::new(values).map_err(|e| HarnessError::Validation(format!("theta: {e}")))
}

fn run(config: PathBuf, seeds: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(&config)?;
    if let Some(n) = seeds {
        cfg.seeds = n;
    }
    let setup = cfg.resolve()?;
    let dir = resolve_output_dir(out.as_deref(), &setup);
    log::info!("running '{}' over {} seeds", setup.name, setup.seeds.len());
    let output = run_experiment(&setup)?;
    let target = write_outputs(&dir, &setup, &output)?;
    println!("wrote results to {}", target.display());
    if let Some((mean, std)) = output.final_exact_stats() {
        println!("final exact objective: {mean:.6} ± {std:.6}");
    }
    if let Some((mean, std)) = output.final_reward_stats() {
        println!("final running average reward: {mean:.6} ± {std:.6}");
    }
    let failures = output.failures();
    if failures.is_empty() {
        Ok(())
    } else {
        let detail: Vec<String> = failures.iter().map(|(s, o)| format!("seed {s}: {o:?}")).collect();
        Err(HarnessError::Abort(detail.join("; ")))
    }
}

fn eval_exact(config: PathBuf, theta: &str) -> Result<()> {
    let setup = ExperimentConfig::from_path(&config)?.resolve()?;
    let theta = parse_theta(theta)?;
    let n = setup.environment.num_params();
    if theta.len() != n {
        return Err(HarnessError::Validation(format!(
            "theta: {} values given, environment has {n} parameters",
            theta.len()
        )));
    }
    if !is_stable(&setup.environment, &theta) {
        return Err(HarnessError::Validation(
            "theta: the controlled chain is unstable".into(),
        ));
    }
    match exact_objective(&setup.environment, &theta) {
        Some(j) => {
            println!("{j}");
            Ok(())
        }
        None => Err(HarnessError::Validation(format!(
            "no exact objective available for this {} environment",
            setup.environment.kind()
        ))),
    }
}

fn check(suite: &str) -> Result<()> {
    let results = run_suite(suite)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(HarnessError::Abort(format!(
            "{failed} of {} checks failed",
            results.len()
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run { config, seeds, out } => run(config, seeds, out),
        Command::EvalExact { config, theta } => eval_exact(config, &theta),
        Command::Check { suite } => check(&suite),
        Command::ListSuites => {
            for (name, about) in SUITES {
                println!("{name:<24}{about}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
