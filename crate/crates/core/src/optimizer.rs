//! Epoch-structured stochastic gradient ascent.
//!
//! Each epoch samples a batch under the current policy, starting from the
//! final state of the previous epoch, forms a gradient estimate and takes
//! the step `Θ_{m+1} = Θ_m + α_m (H_m + regularizer)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::environments::Environment;
use crate::error::{Error, Result};
use crate::estimators::{
    actor_critic_gradient, sage_gradient, sage_gradient_memory, Batch, CriticState, MemoryState, Transition,
};
use crate::exp_family::{BlockPolicy, ExpFamily, Policy, PolicyParams};
use crate::scalar::Scalar;

/// Step sizes `α/(m+1)^σ` and batch lengths `max(min_batch, ⌊ℓ max(m,1)^{σ/2+κ}⌋)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig<T> {
    pub alpha: T,
    pub sigma: T,
    pub ell: T,
    pub kappa: T,
    pub min_batch: usize,
}

impl<T: Scalar> ScheduleConfig<T> {
    pub fn new(alpha: T, sigma: T, ell: T, kappa: T, min_batch: usize) -> Result<Self> {
        if !(alpha > T::zero() && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        if !(sigma >= T::zero() && sigma < T::one()) {
            return Err(Error::Config(format!("sigma must lie in [0, 1), got {sigma}")));
        }
        if !(ell >= T::one() && ell.is_finite()) {
            return Err(Error::Config(format!("ell must be at least 1, got {ell}")));
        }
        if !(kappa >= T::zero() && kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be nonnegative, got {kappa}")));
        }
        if min_batch == 0 {
            return Err(Error::Config("min_batch must be at least 1".into()));
        }
        let cfg = ScheduleConfig {
            alpha,
            sigma,
            ell,
            kappa,
            min_batch,
        };
        if sigma == T::zero() {
            log::debug!("constant step size {alpha}");
        } else if !cfg.in_convergence_regime() {
            log::warn!("schedule sigma={sigma}, kappa={kappa} lies outside 2/3 < sigma < 1, sigma + kappa > 1");
        }
        Ok(cfg)
    }

    /// Constant step and batch length.
    pub fn constant(alpha: T, batch: usize) -> Result<Self> {
        Self::new(alpha, T::zero(), T::from_count(batch.max(1)), T::zero(), batch.max(1))
    }

    pub fn in_convergence_regime(&self) -> bool {
        self.sigma > T::lit(2.0 / 3.0) && self.sigma + self.kappa > T::one()
    }
}

pub fn schedule_step_and_batch<T: Scalar>(m: usize, cfg: &ScheduleConfig<T>) -> (T, usize) {
    let step = cfg.alpha / T::from_count(m + 1).powf(cfg.sigma);
    let exponent = cfg.sigma / T::lit(2.0) + cfg.kappa;
    let raw = (cfg.ell * T::from_count(m.max(1)).powf(exponent)).floor();
    let batch = raw.to_usize().unwrap_or(usize::MAX).max(cfg.min_batch);
    (step, batch)
}

/// KL penalty `b Σ_i ζ(i) KL(π̃(·|i) ‖ π(·|i, θ))` toward a reference policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig<T> {
    pub b: T,
    pub ref_policy: Vec<Vec<T>>,
    pub zeta: Vec<T>,
}

impl<T: Scalar> RegularizerConfig<T> {
    pub fn new(b: T, ref_policy: Vec<Vec<T>>, zeta: Vec<T>) -> Result<Self> {
        if !(b >= T::zero() && b.is_finite()) {
            return Err(Error::Config(format!(
                "regularization weight b must be nonnegative, got {b}"
            )));
        }
        if zeta.len() != ref_policy.len() || zeta.is_empty() {
            return Err(Error::Config(format!(
                "zeta has {} entries for {} reference blocks",
                zeta.len(),
                ref_policy.len()
            )));
        }
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        if zeta.iter().any(|&z| !(z > T::zero())) {
            return Err(Error::Config("zeta must be strictly positive on every block".into()));
        }
        let total: T = zeta.iter().copied().sum();
        if (total - T::one()).abs() > tol {
            return Err(Error::Config(format!("zeta must sum to 1, got {total}")));
        }
        for (i, row) in ref_policy.iter().enumerate() {
            if row.iter().any(|&p| !(p >= T::zero())) {
                return Err(Error::Config(format!(
                    "reference policy block {i} has a negative entry"
                )));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::Config(format!("reference policy block {i} sums to {s}")));
            }
        }
        Ok(RegularizerConfig { b, ref_policy, zeta })
    }

    /// Uniform `ζ` and the given reference policy.
    pub fn uniform_weights(b: T, ref_policy: Vec<Vec<T>>) -> Result<Self> {
        let n = ref_policy.len().max(1);
        Self::new(b, ref_policy, vec![T::one() / T::from_count(n); n])
    }

    fn check_against(&self, policy: &dyn BlockPolicy<T>) -> Result<()> {
        if self.ref_policy.len() != policy.num_blocks() {
            return Err(Error::dims(
                "reference policy blocks",
                policy.num_blocks(),
                self.ref_policy.len(),
            ));
        }
        if let Some(row) = self.ref_policy.iter().find(|r| r.len() != policy.num_actions()) {
            return Err(Error::dims("reference policy actions", policy.num_actions(), row.len()));
        }
        Ok(())
    }
}

/// `−b ∇_θ R(θ)`, which for softmax blocks has component `(i, a)` equal to
/// `b ζ(i) (π̃(a|i) − π(a|i, θ))`. Computed as `b Σ_i ζ(i) Σ_a π̃(a|i) ∇log π(a|i, θ)`.
pub fn kl_regularizer_gradient<T: Scalar>(
    theta: &PolicyParams<T>,
    reg: &RegularizerConfig<T>,
    policy: &dyn BlockPolicy<T>,
) -> Result<Vec<T>> {
    reg.check_against(policy)?;
    if theta.len() != policy.num_params() {
        return Err(Error::dims("regularizer parameters", policy.num_params(), theta.len()));
    }
    let mut out = vec![T::zero(); theta.len()];
    if reg.b == T::zero() {
        return Ok(out);
    }
    for (block, (row, &z)) in reg.ref_policy.iter().zip(&reg.zeta).enumerate() {
        for (action, &p) in row.iter().enumerate() {
            if p > T::zero() {
                policy.accumulate_block_score(block, action, theta, reg.b * z * p, &mut out);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator<T> {
    Sage,
    SageMemory { nu: T },
    ActorCritic { alpha_v: T, alpha_rbar: T },
}

/// Which epochs are kept in the [`RunRecord`]. The last epoch is always kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordStride {
    Every,
    /// Epochs `m` with `m + 1` at (rounded) powers of `ratio`.
    LogSpaced(f64),
    /// Every `n`-th epoch.
    Epochs(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub max_steps: u64,
    pub seed: u64,
    pub record: RecordStride,
}

impl RunOptions {
    pub fn new(max_steps: u64, seed: u64) -> Self {
        RunOptions {
            max_steps,
            seed,
            record: RecordStride::Every,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord<T> {
    pub epoch: usize,
    /// Samples consumed through the end of this epoch.
    pub step: u64,
    /// Parameters after this epoch's update.
    pub theta: PolicyParams<T>,
    pub step_size: T,
    pub batch_len: usize,
    pub gradient_norm: T,
    pub mean_reward: T,
    /// `(1/t) Σ_{t' ≤ t} R_{t'}`.
    pub running_avg_reward: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// Θ or the gradient became non-finite during `epoch`.
    Diverged {
        epoch: usize,
    },
    Aborted {
        epoch: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord<T, S> {
    pub epochs: Vec<EpochRecord<T>>,
    pub final_theta: PolicyParams<T>,
    pub final_state: S,
    pub total_steps: u64,
    pub outcome: RunOutcome,
}

impl<T, S> RunRecord<T, S> {
    pub fn completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }
}

struct Recorder {
    stride: RecordStride,
    next_mark: f64,
}

impl Recorder {
    fn new(stride: RecordStride) -> Result<Self> {
        match stride {
            RecordStride::LogSpaced(r) if !(r > 1.0 && r.is_finite()) => {
                Err(Error::Config(format!("log-spaced record ratio must exceed 1, got {r}")))
            }
            RecordStride::Epochs(0) => Err(Error::Config("record stride must be positive".into())),
            _ => Ok(Recorder { stride, next_mark: 1.0 }),
        }
    }

    fn keep(&mut self, epoch: usize) -> bool {
        match self.stride {
            RecordStride::Every => true,
            RecordStride::Epochs(n) => (epoch + 1).is_multiple_of(n),
            RecordStride::LogSpaced(r) => {
                let count = (epoch + 1) as f64;
                if count >= self.next_mark {
                    while self.next_mark <= count {
                        self.next_mark = (self.next_mark * r).max(self.next_mark + 1.0).round();
                    }
                    true
                } else {
                    false
                }
            }
        }
    }
}

/// Runs gradient ascent until at least `options.max_steps` transitions are
/// sampled. Configuration problems are returned as errors; failures during
/// the run end it early and are reported in [`RunRecord::outcome`].
pub fn run_policy_gradient<T, E>(
    env: &E,
    estimator: &Estimator<T>,
    schedule: &ScheduleConfig<T>,
    regularizer: Option<&RegularizerConfig<T>>,
    theta0: PolicyParams<T>,
    s0: E::State,
    options: &RunOptions,
) -> Result<RunRecord<T, E::State>>
where
    T: Scalar,
    E: Environment<T>,
{
    run_policy_gradient_observed(env, estimator, schedule, regularizer, theta0, s0, options, |_, _| {})
}

/// [`run_policy_gradient`] with a callback receiving every batch and the
/// parameters it was sampled under.
#[allow(clippy::too_many_arguments)]
pub fn run_policy_gradient_observed<T, E, F>(
    env: &E,
    estimator: &Estimator<T>,
    schedule: &ScheduleConfig<T>,
    regularizer: Option<&RegularizerConfig<T>>,
    theta0: PolicyParams<T>,
    s0: E::State,
    options: &RunOptions,
    mut observer: F,
) -> Result<RunRecord<T, E::State>>
where
    T: Scalar,
    E: Environment<T>,
    F: FnMut(&Batch<T, E::State>, &PolicyParams<T>),
{
    let n = env.num_params();
    if theta0.len() != n {
        return Err(Error::dims("initial parameters", n, theta0.len()));
    }
    let regularizer = match regularizer {
        Some(reg) if reg.b > T::zero() => {
            let block = env
                .block_policy()
                .ok_or_else(|| Error::Config("this environment's policy does not support KL regularization".into()))?;
            reg.check_against(block)?;
            Some((reg, block))
        }
        _ => None,
    };
    let d = env.descriptor().stat_dim();
    let mut memory = match *estimator {
        Estimator::SageMemory { nu } => Some(MemoryState::new(nu, d, n)?),
        _ => None,
    };
    let mut critic = match *estimator {
        Estimator::ActorCritic { alpha_v, alpha_rbar } => Some(CriticState::new(alpha_v, alpha_rbar)?),
        _ => None,
    };
    let mut recorder = Recorder::new(options.record)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let mut theta = theta0;
    let mut state = s0;
    let mut steps: u64 = 0;
    let mut reward_total = T::zero();
    let mut epochs = Vec::new();
    let mut pending: Option<EpochRecord<T>> = None;
    let mut outcome = RunOutcome::Completed;
    let mut epoch = 0usize;

    while steps < options.max_steps || epoch == 0 {
        let (step_size, batch_len) = schedule_step_and_batch(epoch, schedule);
        let start_state = state.clone();
        let mut transitions = Vec::with_capacity(batch_len.min(1 << 20));
        let mut next_states = Vec::new();
        let mut failure = None;
        for _ in 0..batch_len {
            let u = T::lit(rng.random::<f64>());
            let action = env.policy().probabilities(&state, &theta).sample_index(u);
            match env.step(&state, action, &mut rng) {
                Ok((reward, next)) => {
                    if critic.is_some() {
                        next_states.push(next.clone());
                    }
                    transitions.push(Transition {
                        state: std::mem::replace(&mut state, next),
                        action,
                        reward,
                    });
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        if let Some(reason) = failure {
            outcome = RunOutcome::Aborted { epoch, reason };
            break;
        }
        let batch = Batch {
            epoch,
            start_state,
            transitions,
        };
        observer(&batch, &theta);
        let batch_reward = batch.reward_sum();
        steps += batch.len() as u64;
        reward_total = reward_total + batch_reward;

        let gradient = match estimator {
            Estimator::Sage => sage_gradient(&batch, &theta, env.descriptor(), env.policy()).map(|g| g.gradient),
            Estimator::SageMemory { .. } => {
                let mem = memory.as_mut().expect("memory state exists for this estimator");
                sage_gradient_memory(&batch, &theta, env.descriptor(), env.policy(), mem).map(|g| g.gradient)
            }
            Estimator::ActorCritic { .. } => {
                let critic = critic.as_mut().expect("critic exists for this estimator");
                let mut sum = vec![T::zero(); n];
                for (tr, next) in batch.transitions.iter().zip(&next_states) {
                    let g = actor_critic_gradient(tr, next, &theta, critic, env.policy());
                    for (s, gi) in sum.iter_mut().zip(g) {
                        *s = *s + gi;
                    }
                }
                let scale = T::one() / T::from_count(batch.len());
                Ok(sum.into_iter().map(|g| g * scale).collect())
            }
        };
        let mut gradient = match gradient {
            Ok(g) => g,
            Err(e) => {
                outcome = RunOutcome::Aborted {
                    epoch,
                    reason: e.to_string(),
                };
                break;
            }
        };
        if let Some((reg, block)) = regularizer {
            let extra = kl_regularizer_gradient(&theta, reg, block)?;
            for (g, r) in gradient.iter_mut().zip(extra) {
                *g = *g + r;
            }
        }
        if gradient.iter().any(|g| !g.is_finite()) {
            outcome = RunOutcome::Diverged { epoch };
            break;
        }
        theta = match theta.ascend(step_size, &gradient) {
            Ok(t) => t,
            Err(_) => {
                outcome = RunOutcome::Diverged { epoch };
                break;
            }
        };

        let gradient_norm = gradient.iter().fold(T::zero(), |acc, &g| acc + g * g).sqrt();
        let record = EpochRecord {
            epoch,
            step: steps,
            theta: theta.clone(),
            step_size,
            batch_len: batch.len(),
            gradient_norm,
            mean_reward: batch_reward / T::from_count(batch.len()),
            running_avg_reward: reward_total / T::lit(steps as f64),
        };
        if recorder.keep(epoch) {
            epochs.push(record);
            pending = None;
        } else {
            pending = Some(record);
        }
        epoch += 1;
    }
    if let Some(last) = pending {
        epochs.push(last);
    }
    Ok(RunRecord {
        epochs,
        final_theta: theta,
        final_state: state,
        total_steps: steps,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::mm1::{Mm1, Mm1Params, ThresholdPolicy};
    use crate::exp_family::BlockSoftmax;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn schedule_examples() {
        let cfg = ScheduleConfig::new(0.1, 0.8, 100.0, 0.0, 2).unwrap();
        assert_eq!(schedule_step_and_batch(0, &cfg), (0.1, 100));
        let cfg = ScheduleConfig::new(1.0, 0.75, 10.0, 0.5, 2).unwrap();
        let (step, batch) = schedule_step_and_batch(3, &cfg);
        assert!(close(step, 0.353_553_390_593_273_8, 1e-12));
        assert_eq!(batch, 26);
        let cfg = ScheduleConfig::constant(0.1, 100).unwrap();
        for m in [0, 1, 17, 5000] {
            assert_eq!(schedule_step_and_batch(m, &cfg), (0.1, 100));
        }
    }

    #[test]
    fn schedule_rejects_bad_values() {
        assert!(ScheduleConfig::new(0.0, 0.8, 10.0, 0.0, 2).is_err());
        assert!(ScheduleConfig::new(0.1, 1.0, 10.0, 0.0, 2).is_err());
        assert!(ScheduleConfig::new(0.1, 0.8, 0.5, 0.0, 2).is_err());
        assert!(ScheduleConfig::new(0.1, 0.8, 10.0, -0.1, 2).is_err());
        assert!(ScheduleConfig::new(0.1, 0.8, 10.0, 0.0, 0).is_err());
    }

    #[test]
    fn regularizer_examples() {
        let policy = BlockSoftmax::new(1, 2).unwrap();
        let reg = RegularizerConfig::new(0.1, vec![vec![0.7, 0.3]], vec![1.0]).unwrap();
        let g = kl_regularizer_gradient(&PolicyParams::zeros(2), &reg, &policy).unwrap();
        assert!(close(g[0], 0.02, 1e-15) && close(g[1], -0.02, 1e-15));

        let off = RegularizerConfig::new(0.0, vec![vec![0.7, 0.3]], vec![1.0]).unwrap();
        assert_eq!(
            kl_regularizer_gradient(&PolicyParams::zeros(2), &off, &policy).unwrap(),
            vec![0.0, 0.0]
        );

        let matched = RegularizerConfig::new(0.4, vec![vec![0.5, 0.5]], vec![1.0]).unwrap();
        assert_eq!(
            kl_regularizer_gradient(&PolicyParams::zeros(2), &matched, &policy).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn regularizer_validation() {
        assert!(RegularizerConfig::new(0.1, vec![vec![0.7, 0.3]], vec![0.0]).is_err());
        assert!(RegularizerConfig::new(0.1, vec![vec![0.7, 0.4]], vec![1.0]).is_err());
        assert!(RegularizerConfig::new(-0.1, vec![vec![0.7, 0.3]], vec![1.0]).is_err());
        assert!(RegularizerConfig::new(0.1, vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.6, 0.3]).is_err());
    }

    #[test]
    fn threshold_regularizer_targets_accept_probability() {
        let policy = ThresholdPolicy { k: 1 };
        let reg = RegularizerConfig::uniform_weights(1.0, vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let g = kl_regularizer_gradient(&PolicyParams::zeros(2), &reg, &policy).unwrap();
        assert!(close(g[0], 0.5 * 0.4, 1e-15));
        assert!(close(g[1], 0.5 * -0.3, 1e-15));
    }

    fn mm1_env() -> Mm1<f64> {
        Mm1::new(Mm1Params::new(0.7, 1.0, 5.0, 1.0, 0).unwrap())
    }

    #[test]
    fn short_run_executes_one_epoch() {
        let env = mm1_env();
        let cfg = ScheduleConfig::constant(0.1, 100).unwrap();
        let rec = run_policy_gradient(
            &env,
            &Estimator::Sage,
            &cfg,
            None,
            PolicyParams::zeros(1),
            0,
            &RunOptions::new(10, 1),
        )
        .unwrap();
        assert_eq!(rec.epochs.len(), 1);
        assert_eq!(rec.total_steps, 100);
        assert!(rec.completed());
    }

    #[test]
    fn batch_of_one_aborts_sage() {
        let env = mm1_env();
        let cfg = ScheduleConfig::constant(0.1, 1).unwrap();
        let rec = run_policy_gradient(
            &env,
            &Estimator::Sage,
            &cfg,
            None,
            PolicyParams::zeros(1),
            0,
            &RunOptions::new(10, 1),
        )
        .unwrap();
        assert!(matches!(rec.outcome, RunOutcome::Aborted { epoch: 0, .. }));
    }

    #[test]
    fn epochs_resume_from_previous_state_and_average_is_exact() {
        let env = mm1_env();
        let cfg = ScheduleConfig::constant(0.1, 20).unwrap();
        let mut batches = Vec::new();
        let rec = run_policy_gradient_observed(
            &env,
            &Estimator::Sage,
            &cfg,
            None,
            PolicyParams::zeros(1),
            0,
            &RunOptions::new(400, 3),
            |b, _| batches.push(b.clone()),
        )
        .unwrap();
        assert_eq!(rec.epochs.len(), 20);
        for pair in batches.windows(2) {
            let last = pair[0].transitions.last().unwrap();
            // The next batch starts where the previous one left off.
            assert_eq!(pair[1].start_state, pair[1].transitions[0].state);
            assert!(last.state + 1 >= pair[1].start_state);
        }
        let mut sum = 0.0;
        let mut t = 0u64;
        for (b, r) in batches.iter().zip(&rec.epochs) {
            sum += b.reward_sum();
            t += b.len() as u64;
            assert_eq!(r.running_avg_reward, sum / t as f64);
            assert_eq!(r.step, t);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let env = mm1_env();
        let cfg = ScheduleConfig::constant(0.1, 50).unwrap();
        let opts = RunOptions::new(2_000, 7);
        let a = run_policy_gradient(&env, &Estimator::Sage, &cfg, None, PolicyParams::zeros(1), 0, &opts).unwrap();
        let b = run_policy_gradient(&env, &Estimator::Sage, &cfg, None, PolicyParams::zeros(1), 0, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_spaced_recording_keeps_last_epoch() {
        let env = mm1_env();
        let cfg = ScheduleConfig::constant(0.1, 10).unwrap();
        let opts = RunOptions {
            max_steps: 1_000,
            seed: 1,
            record: RecordStride::LogSpaced(2.0),
        };
        let rec = run_policy_gradient(&env, &Estimator::Sage, &cfg, None, PolicyParams::zeros(1), 0, &opts).unwrap();
        let kept: Vec<usize> = rec.epochs.iter().map(|e| e.epoch).collect();
        assert_eq!(kept, vec![0, 1, 3, 7, 15, 31, 63, 99]);
        assert!(rec.epochs.windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn actor_critic_and_memory_variants_run() {
        let env = mm1_env();
        let opts = RunOptions::new(500, 2);
        let cfg = ScheduleConfig::constant(1e-3, 1).unwrap();
        let est = Estimator::ActorCritic {
            alpha_v: 1e-2,
            alpha_rbar: 1e-2,
        };
        let rec = run_policy_gradient(&env, &est, &cfg, None, PolicyParams::zeros(1), 0, &opts).unwrap();
        assert!(rec.completed());
        assert_eq!(rec.total_steps, 500);
        let rec = run_policy_gradient(
            &env,
            &Estimator::SageMemory { nu: 0.5 },
            &cfg,
            None,
            PolicyParams::zeros(1),
            0,
            &opts,
        )
        .unwrap();
        assert!(rec.completed());
    }
}
