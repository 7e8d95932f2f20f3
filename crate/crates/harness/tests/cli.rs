//! End-to-end runs of the `sage` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sage(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sage"));
    cmd.args(args).env_remove("SAGE_OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const MM1: &str = "seeds = 2\nmax_steps = 5000\n[environment]\nkind = \"mm1\"\nlambda = 0.7\nk = 1\n";

#[test]
fn run_writes_seed_and_aggregate_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", MM1);
    let out = dir.path().join("out");
    let res = sage(
        &["run", "--config", &cfg, "--seeds", "3", "--out", out.to_str().unwrap()],
        &[],
    );
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let target = out.join("small");
    for f in ["seed_0.csv", "seed_1.csv", "seed_2.csv", "aggregate.csv"] {
        assert!(target.join(f).exists(), "{f} missing");
    }
    let text = std::fs::read_to_string(target.join("seed_1.csv")).unwrap();
    assert!(text.starts_with("# sage-results schema_version=1\n"));
    assert!(!text.contains('\r'));
    let header = text.lines().nth(1).unwrap();
    assert_eq!(
        header,
        "seed,epoch,step,exact_objective,running_avg_reward,theta_norm,stability_flag,theta_0,theta_1"
    );
}

#[test]
fn environment_variable_sets_output_dir_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "envdir.toml", MM1);
    let from_env = dir.path().join("from_env");
    let res = sage(&["run", "--config", &cfg], &[("SAGE_OUTPUT_DIR", &from_env)]);
    assert!(res.status.success());
    assert!(from_env.join("envdir/aggregate.csv").exists());

    let from_flag = dir.path().join("from_flag");
    let res = sage(
        &["run", "--config", &cfg, "--out", from_flag.to_str().unwrap()],
        &[("SAGE_OUTPUT_DIR", &from_env.join("unused"))],
    );
    assert!(res.status.success());
    assert!(from_flag.join("envdir/aggregate.csv").exists());
    assert!(!from_env.join("unused").exists());
}

#[test]
fn eval_exact_prints_objective() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e.toml", "[environment]\nkind = \"mm1\"\nlambda = 0.7\n");
    let res = sage(&["eval-exact", "--config", &cfg, "--theta", "0"], &[]);
    assert!(res.status.success());
    let j: f64 = String::from_utf8(res.stdout).unwrap().trim().parse().unwrap();
    // θ = 0 accepts with probability 1/2 everywhere: ρ = 0.35, J = 5/2 − ρ/(1 − ρ)/0.7.
    let rho: f64 = 0.35;
    let expected = 2.5 - rho / (1.0 - rho) / 0.7;
    assert!((j - expected).abs() < 1e-12, "{j} vs {expected}");
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "e.toml", "[environment]\nkind = \"mm1\"\nlambda = 0.7\n");
    for args in [
        vec!["eval-exact", "--config", &cfg, "--theta", "0,1"],
        vec!["eval-exact", "--config", &cfg, "--theta", "abc"],
        vec!["eval-exact", "--config", "/nonexistent.toml", "--theta", "0"],
        vec!["check", "--suite", "nope"],
        vec!["frobnicate"],
    ] {
        let res = sage(&args, &[]);
        assert_eq!(
            res.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let bad = write_config(dir.path(), "bad.toml", "[environment]\nkind = \"mm1\"\nlambda = -1\n");
    assert_eq!(sage(&["run", "--config", &bad], &[]).status.code(), Some(1));
    let unknown = write_config(
        dir.path(),
        "u.toml",
        "bogus = 1\n[environment]\nkind = \"mm1\"\nlambda = 0.7\n",
    );
    assert_eq!(sage(&["run", "--config", &unknown], &[]).status.code(), Some(1));
}

#[test]
fn unstable_theta_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "h.toml", "[environment]\nkind = \"mm1\"\nlambda = 1.4\n");
    let res = sage(&["eval-exact", "--config", &cfg, "--theta", "5"], &[]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn aborted_run_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // Large rewards and a step near f64::MAX overflow the parameters on the first update.
    let cfg = write_config(
        dir.path(),
        "abort.toml",
        "seeds = 2\nmax_steps = 200000\n[environment]\nkind = \"mm1\"\nlambda = 1.4\ngamma = 1e6\n\
         [schedule]\nalpha = 1e306\nell = 100.0\n",
    );
    let out = dir.path().join("out");
    let res = sage(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stdout));
    assert!(out.join("abort/aggregate.csv").exists());
}

#[test]
fn suites_listed_and_runnable() {
    let res = sage(&["list-suites"], &[]);
    let listing = String::from_utf8(res.stdout).unwrap();
    for name in [
        "score-identity",
        "buzen-oracle",
        "detailed-balance",
        "nu-zero-reduction",
        "schedule-monotonicity",
    ] {
        assert!(listing.contains(name));
    }
    let res = sage(&["check", "--suite", "detailed-balance"], &[]);
    assert!(res.status.success());
    assert!(String::from_utf8(res.stdout)
        .unwrap()
        .contains("PASS detailed-balance/2x2"));
}
