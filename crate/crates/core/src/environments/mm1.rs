//! Single-server queue with admission control, observed right before each
//! arrival.
//!
//! Jobs arrive at rate λ and are served at rate μ. An admitted job earns γ;
//! every job present costs η per unit time. Under the threshold policy the
//! job finding `s` jobs is admitted with probability `logistic(θ_{min(s,k)})`
//! and the stationary law is
//!
//! ```text
//! p(s | θ) ∝ (λ/μ)^s Π_{i<k} ρ_i^{1{s ≥ i+1}} · ρ_k^{max(s−k, 0)},   ρ_i = π(accept | i, θ)
//! ```

use rand::Rng;

use super::{sample_exp, Environment};
use crate::error::{Error, Result};
use crate::exp_family::{sigmoid_threshold_policy, ActionDistribution, BlockPolicy, ExpFamily, Policy, PolicyParams};
use crate::linalg::Matrix;
use crate::scalar::{logistic, softplus, Scalar};

pub const ACCEPT: usize = 0;
pub const REJECT: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Mm1Params<T> {
    pub lambda: T,
    pub mu: T,
    pub gamma: T,
    pub eta: T,
    pub k: usize,
}

impl<T: Scalar> Mm1Params<T> {
    pub fn new(lambda: T, mu: T, gamma: T, eta: T, k: usize) -> Result<Self> {
        if !(lambda > T::zero() && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if !(mu > T::zero() && mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {mu}")));
        }
        if !gamma.is_finite() || !eta.is_finite() {
            return Err(Error::Config("gamma and eta must be finite".into()));
        }
        Ok(Mm1Params {
            lambda,
            mu,
            gamma,
            eta,
            k,
        })
    }

    pub fn traffic(&self) -> T {
        self.lambda / self.mu
    }
}

/// Outcome of one inter-arrival interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interarrival<T> {
    /// `∫ queue length dt` over the interval.
    pub queue_integral: T,
    pub next_queue: u64,
}

/// Runs the departure process from `queue` until the next arrival.
pub fn simulate_interarrival<T: Scalar, R: Rng + ?Sized>(
    queue: u64,
    params: &Mm1Params<T>,
    rng: &mut R,
) -> Interarrival<T> {
    let mut remaining = sample_exp(rng, params.lambda);
    let mut level = queue;
    let mut integral = T::zero();
    while level > 0 {
        let service = sample_exp(rng, params.mu);
        if service >= remaining {
            break;
        }
        integral = integral + T::from_count(level as usize) * service;
        remaining = remaining - service;
        level -= 1;
    }
    if level > 0 {
        integral = integral + T::from_count(level as usize) * remaining;
    }
    Interarrival {
        queue_integral: integral,
        next_queue: level,
    }
}

/// Admits (or not) the arriving job and simulates until the next arrival.
/// Reward is `γ·1{accept} − η ∫ queue length`.
pub fn mm1_transition<T: Scalar, R: Rng + ?Sized>(
    queue: u64,
    accept: bool,
    params: &Mm1Params<T>,
    rng: &mut R,
) -> (T, u64) {
    let start = queue + u64::from(accept);
    let gap = simulate_interarrival(start, params, rng);
    let admission = if accept { params.gamma } else { T::zero() };
    (admission - params.eta * gap.queue_integral, gap.next_queue)
}

/// True iff the chain is positive recurrent: `π(accept | k, θ) < μ/λ`.
pub fn mm1_stability_check<T: Scalar>(theta: &PolicyParams<T>, params: &Mm1Params<T>) -> bool {
    match sigmoid_threshold_policy(params.k as u64, params.k, theta) {
        Ok(p) => p < params.mu / params.lambda,
        Err(_) => false,
    }
}

/// Threshold admission policy with one logit per queue level up to `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdPolicy {
    pub k: usize,
}

impl ThresholdPolicy {
    pub fn block(&self, queue: u64) -> usize {
        queue.min(self.k as u64) as usize
    }
}

impl<T: Scalar> Policy<T, u64> for ThresholdPolicy {
    fn num_params(&self) -> usize {
        self.k + 1
    }

    fn probabilities(&self, state: &u64, theta: &PolicyParams<T>) -> ActionDistribution<T> {
        ActionDistribution::binary_logit(theta[self.block(*state)])
    }

    fn accumulate_score(&self, state: &u64, action: usize, theta: &PolicyParams<T>, weight: T, out: &mut [T]) {
        BlockPolicy::accumulate_block_score(self, self.block(*state), action, theta, weight, out);
    }
}

impl<T: Scalar> BlockPolicy<T> for ThresholdPolicy {
    fn num_blocks(&self) -> usize {
        self.k + 1
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn num_params(&self) -> usize {
        self.k + 1
    }

    fn block_probabilities(&self, block: usize, theta: &PolicyParams<T>) -> ActionDistribution<T> {
        ActionDistribution::binary_logit(theta[block])
    }

    fn accumulate_block_score(&self, block: usize, action: usize, theta: &PolicyParams<T>, weight: T, out: &mut [T]) {
        let p = logistic(theta[block]);
        let indicator = if action == ACCEPT { T::one() } else { T::zero() };
        out[block] = out[block] + weight * (indicator - p);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mm1Descriptor<T> {
    params: Mm1Params<T>,
}

pub fn mm1_descriptor<T: Scalar>(params: &Mm1Params<T>) -> Mm1Descriptor<T> {
    Mm1Descriptor { params: params.clone() }
}

impl<T: Scalar> ExpFamily<T, u64> for Mm1Descriptor<T> {
    fn stat_dim(&self) -> usize {
        self.params.k + 1
    }

    fn param_dim(&self) -> usize {
        self.params.k + 1
    }

    fn sufficient_statistic_into(&self, state: &u64, out: &mut [T]) {
        let k = self.params.k;
        for (i, o) in out.iter_mut().enumerate().take(k) {
            *o = if *state > i as u64 { T::one() } else { T::zero() };
        }
        out[k] = T::from_count(state.saturating_sub(k as u64) as usize);
    }

    fn log_load_jacobian(&self, theta: &PolicyParams<T>) -> Matrix<T> {
        let diag: Vec<T> = theta.as_slice().iter().map(|&t| T::one() - logistic(t)).collect();
        Matrix::diagonal(&diag)
    }

    fn balance_log(&self, state: &u64) -> Option<T> {
        Some(T::from_count(*state as usize) * self.params.traffic().ln())
    }

    fn log_load(&self, theta: &PolicyParams<T>) -> Option<Vec<T>> {
        // log σ(t) = −softplus(−t)
        Some(theta.as_slice().iter().map(|&t| -softplus(-t)).collect())
    }

    fn load(&self, theta: &PolicyParams<T>) -> Option<Vec<T>> {
        Some(theta.as_slice().iter().map(|&t| logistic(t)).collect())
    }
}

#[derive(Debug, Clone)]
pub struct Mm1<T> {
    pub params: Mm1Params<T>,
    descriptor: Mm1Descriptor<T>,
    policy: ThresholdPolicy,
}

impl<T: Scalar> Mm1<T> {
    pub fn new(params: Mm1Params<T>) -> Self {
        Mm1 {
            descriptor: mm1_descriptor(&params),
            policy: ThresholdPolicy { k: params.k },
            params,
        }
    }
}

impl<T: Scalar> Environment<T> for Mm1<T> {
    type State = u64;
    type Descriptor = Mm1Descriptor<T>;
    type Policy = ThresholdPolicy;

    fn descriptor(&self) -> &Mm1Descriptor<T> {
        &self.descriptor
    }

    fn policy(&self) -> &ThresholdPolicy {
        &self.policy
    }

    fn step<R: Rng + ?Sized>(&self, state: &u64, action: usize, rng: &mut R) -> Result<(T, u64)> {
        if action > REJECT {
            return Err(Error::InvalidState(format!("admission action {action}")));
        }
        Ok(mm1_transition(*state, action == ACCEPT, &self.params, rng))
    }

    fn block_policy(&self) -> Option<&dyn BlockPolicy<T>> {
        Some(&self.policy)
    }
}
