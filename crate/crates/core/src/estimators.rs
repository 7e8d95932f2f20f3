//! Gradient estimators for the long-run average reward.
//!
//! * [`sage_gradient`]: the score-aware estimator
//!   `D log ρ(θ)ᵀ Ĉov[x(S), R] + Ê[R ∇log π(A | S, θ)]` over one batch.
//! * [`sage_gradient_memory`]: the same estimator with geometrically
//!   discounted statistics from earlier batches (memory factor `ν`).
//! * [`actor_critic_gradient`]: one-step tabular actor–critic.
//!
//! Sums are accumulated left to right in batch order. Reward deviations are
//! taken against a reference reward (the first reward of the batch) so that a
//! batch of identical rewards yields a covariance of exactly zero.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};
use crate::exp_family::{ExpFamily, Policy, PolicyParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T, S> {
    pub state: S,
    pub action: usize,
    /// Reward collected after taking `action` in `state`.
    pub reward: T,
}

/// One epoch of samples drawn under a fixed parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T, S> {
    pub epoch: usize,
    /// State the epoch started from (the previous epoch's final state).
    pub start_state: S,
    pub transitions: Vec<Transition<T, S>>,
}

impl<T: Scalar, S> Batch<T, S> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn reward_sum(&self) -> T {
        self.transitions.iter().fold(T::zero(), |acc, tr| acc + tr.reward)
    }
}

/// Estimated gradient together with the sample moments it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate<T> {
    pub gradient: Vec<T>,
    pub mean_stats: Vec<T>,
    pub mean_reward: T,
    pub covariance: Vec<T>,
    pub score_term: Vec<T>,
}

/// Per-batch sums shared by both SAGE variants.
struct BatchSums<T> {
    /// Row-major `len × d` sufficient statistics.
    stats: Vec<T>,
    stat_sum: Vec<T>,
    reward_ref: T,
    /// `Σ (R − reward_ref)`.
    shifted_reward_sum: T,
    /// `Σ R ∇log π(A | S, θ)`.
    score_sum: Vec<T>,
}

fn batch_sums<T, S, D, P>(
    batch: &Batch<T, S>,
    theta: &PolicyParams<T>,
    descriptor: &D,
    policy: &P,
) -> Result<BatchSums<T>>
where
    T: Scalar,
    D: ExpFamily<T, S> + ?Sized,
    P: Policy<T, S> + ?Sized,
{
    let d = descriptor.stat_dim();
    let n = descriptor.param_dim();
    if theta.len() != n {
        return Err(Error::dims("estimator parameters", n, theta.len()));
    }
    if policy.num_params() != n {
        return Err(Error::dims("policy parameters vs descriptor", n, policy.num_params()));
    }
    let reward_ref = batch.transitions.first().map_or(T::zero(), |t| t.reward);
    let mut sums = BatchSums {
        stats: vec![T::zero(); batch.len() * d],
        stat_sum: vec![T::zero(); d],
        reward_ref,
        shifted_reward_sum: T::zero(),
        score_sum: vec![T::zero(); n],
    };
    for (t, tr) in batch.transitions.iter().enumerate() {
        if !tr.reward.is_finite() {
            return Err(Error::NonFinite(format!("reward at batch position {t}")));
        }
        let row = &mut sums.stats[t * d..(t + 1) * d];
        descriptor.sufficient_statistic_into(&tr.state, row);
        for (acc, &x) in sums.stat_sum.iter_mut().zip(row.iter()) {
            *acc = *acc + x;
        }
        sums.shifted_reward_sum = sums.shifted_reward_sum + (tr.reward - reward_ref);
        policy.accumulate_score(&tr.state, tr.action, theta, tr.reward, &mut sums.score_sum);
    }
    Ok(sums)
}

/// `Σ_t (x(S_t) − center_x)(R_t − reward_ref − center_r)`, in batch order.
fn centered_cross_sum<T: Scalar, S>(
    batch: &Batch<T, S>,
    stats: &[T],
    center_x: &[T],
    reward_ref: T,
    center_r: T,
) -> Vec<T> {
    let d = center_x.len();
    let mut out = vec![T::zero(); d];
    for (t, tr) in batch.transitions.iter().enumerate() {
        let dr = (tr.reward - reward_ref) - center_r;
        let row = &stats[t * d..(t + 1) * d];
        for ((o, &x), &m) in out.iter_mut().zip(row).zip(center_x) {
            *o = *o + (x - m) * dr;
        }
    }
    out
}

fn combine<T, S, D>(descriptor: &D, theta: &PolicyParams<T>, covariance: &[T], score_term: &[T]) -> Result<Vec<T>>
where
    T: Scalar,
    D: ExpFamily<T, S> + ?Sized,
{
    let mut g = descriptor.log_load_jacobian(theta).transpose_mul_vec(covariance)?;
    for (gi, &e) in g.iter_mut().zip(score_term) {
        *gi = *gi + e;
    }
    Ok(g)
}

/// Score-aware gradient estimate over one batch of at least two transitions.
///
/// Returns `D log ρ(θ)ᵀ C̄ + Ē` where `C̄` is the unbiased (divisor `N − 1`)
/// sample covariance between `x(S_t)` and `R_{t+1}` and `Ē` the sample mean of
/// `R_{t+1} ∇log π(A_t | S_t, θ)`.
pub fn sage_gradient<T, S, D, P>(
    batch: &Batch<T, S>,
    theta: &PolicyParams<T>,
    descriptor: &D,
    policy: &P,
) -> Result<GradientEstimate<T>>
where
    T: Scalar,
    D: ExpFamily<T, S> + ?Sized,
    P: Policy<T, S> + ?Sized,
{
    if batch.len() < 2 {
        return Err(Error::InvalidBatch {
            len: batch.len(),
            required: 2,
        });
    }
    let sums = batch_sums(batch, theta, descriptor, policy)?;
    let count = T::from_count(batch.len());
    let mean_stats: Vec<T> = sums.stat_sum.iter().map(|&s| s / count).collect();
    let mean_shifted_reward = sums.shifted_reward_sum / count;
    let cross = centered_cross_sum(batch, &sums.stats, &mean_stats, sums.reward_ref, mean_shifted_reward);
    let dof = count - T::one();
    let covariance: Vec<T> = cross.iter().map(|&c| c / dof).collect();
    let score_term: Vec<T> = sums.score_sum.iter().map(|&e| e / count).collect();
    let gradient = combine(descriptor, theta, &covariance, &score_term)?;
    Ok(GradientEstimate {
        gradient,
        mean_stats,
        mean_reward: sums.reward_ref + mean_shifted_reward,
        covariance,
        score_term,
    })
}

/// Running state of the memory-factor SAGE estimator.
///
/// All accumulators are geometrically weighted sums (not averages); `n_acc`
/// is the weighted sample count and `m_acc` the sum of squared weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState<T> {
    pub nu: T,
    pub n_acc: T,
    pub m_acc: T,
    pub x_acc: Vec<T>,
    /// Weighted sum of `R − r_ref`.
    pub r_acc: T,
    /// Reference reward the reward accumulator is shifted by.
    pub r_ref: T,
    pub c_acc: Vec<T>,
    pub e_acc: Vec<T>,
}

impl<T: Scalar> MemoryState<T> {
    pub fn new(nu: T, stat_dim: usize, param_dim: usize) -> Result<Self> {
        if !(nu >= T::zero() && nu <= T::one()) {
            return Err(Error::Config(format!("memory factor nu must lie in [0, 1], got {nu}")));
        }
        Ok(MemoryState {
            nu,
            n_acc: T::zero(),
            m_acc: T::zero(),
            x_acc: vec![T::zero(); stat_dim],
            r_acc: T::zero(),
            r_ref: T::zero(),
            c_acc: vec![T::zero(); stat_dim],
            e_acc: vec![T::zero(); param_dim],
        })
    }

    /// Weighted sum of raw rewards, `Σ w R`.
    pub fn reward_sum(&self) -> T {
        self.r_acc + self.r_ref * self.n_acc
    }
}

/// Memory-factor SAGE: accepts batches of any positive length.
///
/// With `nu = 0` and a batch of length at least two, the returned gradient is
/// bitwise identical to [`sage_gradient`] on the same batch.
pub fn sage_gradient_memory<T, S, D, P>(
    batch: &Batch<T, S>,
    theta: &PolicyParams<T>,
    descriptor: &D,
    policy: &P,
    mem: &mut MemoryState<T>,
) -> Result<GradientEstimate<T>>
where
    T: Scalar,
    D: ExpFamily<T, S> + ?Sized,
    P: Policy<T, S> + ?Sized,
{
    if batch.is_empty() {
        return Err(Error::InvalidBatch { len: 0, required: 1 });
    }
    if mem.x_acc.len() != descriptor.stat_dim() || mem.e_acc.len() != descriptor.param_dim() {
        return Err(Error::dims(
            "memory state statistics",
            descriptor.stat_dim(),
            mem.x_acc.len(),
        ));
    }
    let sums = batch_sums(batch, theta, descriptor, policy)?;
    let nu = mem.nu;
    let len = T::from_count(batch.len());

    // Re-express the previous reward accumulator against this batch's reference.
    let carried_r = mem.r_acc + (mem.r_ref - sums.reward_ref) * mem.n_acc;
    mem.n_acc = nu * mem.n_acc + len;
    mem.m_acc = nu * nu * mem.m_acc + len;
    for (acc, &s) in mem.x_acc.iter_mut().zip(&sums.stat_sum) {
        *acc = nu * *acc + s;
    }
    mem.r_acc = nu * carried_r + sums.shifted_reward_sum;
    mem.r_ref = sums.reward_ref;

    let n = mem.n_acc;
    let mean_stats: Vec<T> = mem.x_acc.iter().map(|&x| x / n).collect();
    let mean_shifted_reward = mem.r_acc / n;
    let cross = centered_cross_sum(batch, &sums.stats, &mean_stats, sums.reward_ref, mean_shifted_reward);
    for (acc, &c) in mem.c_acc.iter_mut().zip(&cross) {
        *acc = nu * *acc + c;
    }
    for (acc, &e) in mem.e_acc.iter_mut().zip(&sums.score_sum) {
        *acc = nu * *acc + e;
    }

    // N/(N² − M) · C, written as C / ((N² − M)/N) so that ν = 0 divides by N − 1 exactly.
    let excess = n * n - mem.m_acc;
    let covariance: Vec<T> = if excess > T::zero() {
        let divisor = excess / n;
        mem.c_acc.iter().map(|&c| c / divisor).collect()
    } else {
        mem.c_acc.iter().map(|&c| c / n).collect()
    };
    let score_term: Vec<T> = mem.e_acc.iter().map(|&e| e / n).collect();
    let gradient = combine(descriptor, theta, &covariance, &score_term)?;
    Ok(GradientEstimate {
        gradient,
        mean_stats,
        mean_reward: sums.reward_ref + mean_shifted_reward,
        covariance,
        score_term,
    })
}

/// Tabular critic: state values (zero by default) and an average-reward
/// estimate.
#[derive(Debug, Clone)]
pub struct CriticState<T, S: Eq + Hash> {
    values: HashMap<S, T>,
    pub avg_reward: T,
    pub alpha_v: T,
    pub alpha_rbar: T,
}

impl<T: Scalar, S: Eq + Hash + Clone> CriticState<T, S> {
    pub fn new(alpha_v: T, alpha_rbar: T) -> Result<Self> {
        if !(alpha_v > T::zero() && alpha_rbar > T::zero()) {
            return Err(Error::Config("critic step sizes must be positive".into()));
        }
        Ok(CriticState {
            values: HashMap::new(),
            avg_reward: T::zero(),
            alpha_v,
            alpha_rbar,
        })
    }

    pub fn value(&self, state: &S) -> T {
        self.values.get(state).copied().unwrap_or_else(T::zero)
    }

    /// Number of states with a stored value.
    pub fn table_len(&self) -> usize {
        self.values.len()
    }
}

/// One actor–critic step: updates the critic in place and returns
/// `δ ∇log π(A_t | S_t, θ)` with `δ = R − R̄ + V[S'] − V[S]`.
pub fn actor_critic_gradient<T, S, P>(
    transition: &Transition<T, S>,
    next_state: &S,
    theta: &PolicyParams<T>,
    critic: &mut CriticState<T, S>,
    policy: &P,
) -> Vec<T>
where
    T: Scalar,
    S: Eq + Hash + Clone,
    P: Policy<T, S> + ?Sized,
{
    let td = transition.reward - critic.avg_reward + critic.value(next_state) - critic.value(&transition.state);
    critic.avg_reward = critic.avg_reward + critic.alpha_rbar * td;
    if td != T::zero() {
        let v = critic.values.entry(transition.state.clone()).or_insert_with(T::zero);
        *v = *v + critic.alpha_v * td;
    }
    let mut g = vec![T::zero(); policy.num_params()];
    policy.accumulate_score(&transition.state, transition.action, theta, td, &mut g);
    g
}
