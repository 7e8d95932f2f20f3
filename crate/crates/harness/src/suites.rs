//! Self-check suites runnable from the command line.

use std::fmt;

use sage_core::environments::ising::ising_descriptor;
use sage_core::environments::load_balancing::lb_descriptor;
use sage_core::environments::mm1::mm1_descriptor;
use sage_core::exact_eval::{
    buzen_log_domain, buzen_normalizing_constants, ising_detailed_balance_error, ising_glauber_chain,
    lb_normalizer_by_enumeration, lb_uniformized_chain, mm1_embedded_chain, verify_score_identity,
};
use sage_core::optimizer::{run_policy_gradient, schedule_step_and_batch};
use sage_core::{
    Estimator, Ising, IsingParams, IsingState, LbParams, Mm1, Mm1Params, PolicyParams, RunOptions, ScheduleConfig,
};

use crate::error::{HarnessError, Result};

pub const SUITES: &[(&str, &str)] = &[
    (
        "score-identity",
        "finite-difference check of the stationary score on small chains",
    ),
    ("buzen-oracle", "Buzen normalizing constants against direct enumeration"),
    ("detailed-balance", "Glauber chain reversibility for a small Ising grid"),
    (
        "nu-zero-reduction",
        "memory estimator with nu = 0 reproduces plain SAGE bit for bit",
    ),
    (
        "schedule-monotonicity",
        "step sizes never increase and batch sizes never decrease",
    ),
    ("all", "every suite above"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-5;

fn score_identity() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for k in 0..=2 {
        let params = Mm1Params::new(0.5, 1.0, 5.0, 1.0, k)?;
        let theta = PolicyParams::new((0..=k).map(|i| 0.3 - 0.2 * i as f64).collect())?;
        let err = verify_score_identity(
            &mm1_descriptor(&params),
            &theta,
            |t| mm1_embedded_chain(t, &params, 60),
            FD_STEP,
        )?;
        out.push(check(
            format!("score-identity/mm1 k={k}"),
            err < FD_TOL,
            format!("max abs error {err:.3e}"),
        ));
    }
    let params = LbParams::new(3, 1.2, vec![1.0, 0.7, 1.5])?;
    let theta = PolicyParams::new(vec![0.2, -0.3, 0.1])?;
    let err = verify_score_identity(
        &lb_descriptor(&params),
        &theta,
        |t| lb_uniformized_chain(t, &params),
        FD_STEP,
    )?;
    out.push(check(
        "score-identity/load-balancing",
        err < FD_TOL,
        format!("max abs error {err:.3e}"),
    ));
    let params = IsingParams::new(2, 2, 1.0, 1.0, -1.0, 1.0)?;
    let theta = PolicyParams::new(vec![0.1, 0.2, -0.1])?;
    let err = verify_score_identity(
        &ising_descriptor(&params),
        &theta,
        |t| ising_glauber_chain(t, &params),
        FD_STEP,
    )?;
    out.push(check(
        "score-identity/ising",
        err < FD_TOL,
        format!("max abs error {err:.3e}"),
    ));
    Ok(out)
}

fn buzen_oracle() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let cases: [(u32, Vec<f64>, Vec<f64>); 3] = [
        (3, vec![1.0, 2.0], vec![0.4, -0.1]),
        (4, vec![0.5, 1.0, 1.5], vec![0.0, 0.7, -0.5]),
        (2, vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]),
    ];
    for (capacity, mu, theta) in cases {
        let n = mu.len();
        let params = LbParams::new(capacity, 1.3, mu)?;
        let theta = PolicyParams::new(theta)?;
        let direct = lb_normalizer_by_enumeration(&theta, &params)?;
        let linear = buzen_normalizing_constants(&theta, &params)?.normalizer();
        let log = buzen_log_domain(&theta, &params)?.log_normalizer().exp();
        let err = ((linear - direct) / direct).abs().max(((log - direct) / direct).abs());
        out.push(check(
            format!("buzen-oracle/n={n} c={capacity}"),
            err < 1e-12,
            format!("max relative error {err:.3e}"),
        ));
    }
    Ok(out)
}

fn detailed_balance() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (d1, d2) in [(2, 2), (2, 3)] {
        let params = IsingParams::new(d1, d2, 1.0, 1.0, -1.0, 1.0)?;
        let theta = PolicyParams::new(vec![0.4, -0.3, 0.6])?;
        let err = ising_detailed_balance_error(&theta, &params)?;
        out.push(check(
            format!("detailed-balance/{d1}x{d2}"),
            err < 1e-10,
            format!("max relative error {err:.3e}"),
        ));
    }
    Ok(out)
}

fn nu_zero_reduction() -> Result<Vec<CheckResult>> {
    let schedule = ScheduleConfig::constant(0.1, 20)?;
    let options = RunOptions::new(2_000, 7);
    let mut out = Vec::new();

    let mm1 = Mm1::new(Mm1Params::new(0.7, 1.0, 5.0, 1.0, 2)?);
    let theta0 = PolicyParams::zeros(3);
    let a = run_policy_gradient(&mm1, &Estimator::Sage, &schedule, None, theta0.clone(), 0, &options)?;
    let b = run_policy_gradient(
        &mm1,
        &Estimator::SageMemory { nu: 0.0 },
        &schedule,
        None,
        theta0,
        0,
        &options,
    )?;
    out.push(reduction_result("mm1", &a.epochs, &b.epochs));

    let params = IsingParams::new(3, 4, 1.0, 1.0, -1.0, 1.0)?;
    let s0 = IsingState::split(&params, 0)?;
    let ising = Ising::new(params);
    let theta0 = PolicyParams::zeros(3);
    let a = run_policy_gradient(
        &ising,
        &Estimator::Sage,
        &schedule,
        None,
        theta0.clone(),
        s0.clone(),
        &options,
    )?;
    let b = run_policy_gradient(
        &ising,
        &Estimator::SageMemory { nu: 0.0 },
        &schedule,
        None,
        theta0,
        s0,
        &options,
    )?;
    out.push(reduction_result("ising", &a.epochs, &b.epochs));
    Ok(out)
}

fn reduction_result(label: &str, a: &[sage_core::EpochRecord<f64>], b: &[sage_core::EpochRecord<f64>]) -> CheckResult {
    let identical = a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.theta
                .as_slice()
                .iter()
                .zip(y.theta.as_slice())
                .all(|(p, q)| p.to_bits() == q.to_bits())
        });
    check(
        format!("nu-zero-reduction/{label}"),
        identical,
        format!("{} epochs compared bitwise", a.len()),
    )
}

fn schedule_monotonicity() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (sigma, kappa, ell) in [(0.0, 0.0, 100.0), (0.5, 0.0, 10.0), (0.6, 0.1, 2.0), (0.9, 0.5, 1.0)] {
        let cfg = ScheduleConfig::new(0.1, sigma, ell, kappa, 2)?;
        let mut prev = schedule_step_and_batch(0, &cfg);
        let mut ok = true;
        for m in 1..10_000 {
            let cur = schedule_step_and_batch(m, &cfg);
            ok &= cur.0 <= prev.0 && cur.1 >= prev.1 && cur.1 >= 2;
            prev = cur;
        }
        out.push(check(
            format!("schedule-monotonicity/sigma={sigma} kappa={kappa} ell={ell}"),
            ok,
            "10000 epochs",
        ));
    }
    Ok(out)
}

/// Runs the named suite; unknown names are a validation error.
pub fn run_suite(name: &str) -> Result<Vec<CheckResult>> {
    match name {
        "score-identity" => score_identity(),
        "buzen-oracle" => buzen_oracle(),
        "detailed-balance" => detailed_balance(),
        "nu-zero-reduction" => nu_zero_reduction(),
        "schedule-monotonicity" => schedule_monotonicity(),
        "all" => {
            let mut all = Vec::new();
            for (suite, _) in SUITES.iter().filter(|(s, _)| *s != "all") {
                all.extend(run_suite(suite)?);
            }
            Ok(all)
        }
        other => Err(HarnessError::Validation(format!(
            "unknown suite '{other}'; run list-suites to see the options"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_validation_error() {
        assert_eq!(run_suite("nope").unwrap_err().exit_code(), 1);
    }

    #[test]
    fn cheap_suites_pass() {
        for suite in ["buzen-oracle", "detailed-balance", "schedule-monotonicity"] {
            let results = run_suite(suite).unwrap();
            assert!(!results.is_empty());
            assert!(results.iter().all(|r| r.passed), "{results:?}");
        }
    }
}
