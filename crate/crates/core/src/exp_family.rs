//! Policy parametrizations, their score functions, and the
//! exponential-family structure of the stationary distribution.
//!
//! A controlled chain fits this crate when its stationary law has the form
//!
//! ```text
//! p(s | θ) ∝ Φ(s) · Π_i ρ_i(θ)^{x_i(s)}
//! ```
//!
//! with balance function `Φ`, load function `ρ` and sufficient statistics
//! `x`. The stationary score is then `D log ρ(θ)ᵀ (x(s) − E[x(S)])`, which is
//! all the SAGE estimator needs besides the policy score.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, logistic, Scalar};

/// Dense policy parameter vector. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T>(Vec<T>);

impl<T: Scalar> PolicyParams<T> {
    pub fn new(theta: Vec<T>) -> Result<Self> {
        if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("policy parameter component {i}")));
        }
        Ok(PolicyParams(theta))
    }

    pub fn zeros(n: usize) -> Self {
        PolicyParams(vec![T::zero(); n])
    }

    pub fn from_f64(theta: &[f64]) -> Result<Self> {
        Self::new(theta.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn norm(&self) -> T {
        self.0.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
    }

    /// `θ + step · direction`, rejected when the result is not finite.
    pub fn ascend(&self, step: T, direction: &[T]) -> Result<Self> {
        if direction.len() != self.len() {
            return Err(Error::dims("parameter update", self.len(), direction.len()));
        }
        Self::new(self.0.iter().zip(direction).map(|(&t, &g)| t + step * g).collect())
    }

    /// Copy with component `i` shifted by `delta`.
    pub fn perturbed(&self, i: usize, delta: T) -> Result<Self> {
        let mut v = self.0.clone();
        v[i] = v[i] + delta;
        Self::new(v)
    }
}

impl<T> std::ops::Index<usize> for PolicyParams<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

/// Probabilities over a finite action set.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution<T>(Vec<T>);

impl<T: Scalar> ActionDistribution<T> {
    /// Normalized softmax of the given logits (max-shifted).
    pub fn from_logits(logits: &[T]) -> Self {
        let lse = log_sum_exp(logits);
        ActionDistribution(logits.iter().map(|&l| (l - lse).exp()).collect())
    }

    /// Two-action distribution `(p, 1 − p)`.
    pub fn binary(p: T) -> Self {
        ActionDistribution(vec![p, T::one() - p])
    }

    /// `(σ(z), σ(−z))`, accurate in both tails.
    pub fn binary_logit(z: T) -> Self {
        ActionDistribution(vec![logistic(z), logistic(-z)])
    }

    pub fn probabilities(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Inverse-CDF draw from a uniform variate `u ∈ [0, 1)`.
    pub fn sample_index(&self, u: T) -> usize {
        let mut acc = T::zero();
        for (i, &p) in self.0.iter().enumerate() {
            acc = acc + p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding gap above the accumulated mass.
        self.0.iter().rposition(|&p| p > T::zero()).unwrap_or(0)
    }
}

impl<T> std::ops::Index<usize> for ActionDistribution<T> {
    type Output = T;

    fn index(&self, a: usize) -> &T {
        &self.0[a]
    }
}

/// Softmax policy over per-action feature vectors:
/// `π(a | s) ∝ exp(θᵀ ξ(s, a))`.
pub fn softmax_action_distribution<T: Scalar>(
    features: &[Vec<T>],
    theta: &PolicyParams<T>,
) -> Result<ActionDistribution<T>> {
    if features.is_empty() {
        return Err(Error::Config("softmax over an empty action set".into()));
    }
    let logits = features
        .iter()
        .map(|xi| {
            if xi.len() != theta.len() {
                return Err(Error::dims("softmax feature vector", theta.len(), xi.len()));
            }
            Ok(xi
                .iter()
                .zip(theta.as_slice())
                .fold(T::zero(), |acc, (&f, &t)| acc + f * t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActionDistribution::from_logits(&logits))
}

/// Acceptance probability of the threshold policy: the logistic of
/// `θ_{min(s, k)}`.
pub fn sigmoid_threshold_policy<T: Scalar>(queue_length: u64, threshold: usize, theta: &PolicyParams<T>) -> Result<T> {
    if theta.len() != threshold + 1 {
        return Err(Error::dims("threshold policy parameters", threshold + 1, theta.len()));
    }
    let idx = (queue_length.min(threshold as u64)) as usize;
    Ok(logistic(theta[idx]))
}

/// A positive, differentiable state-dependent policy.
pub trait Policy<T: Scalar, S> {
    fn num_params(&self) -> usize;

    fn probabilities(&self, state: &S, theta: &PolicyParams<T>) -> ActionDistribution<T>;

    /// Adds `weight · ∇_θ log π(action | state, θ)` into `out`.
    fn accumulate_score(&self, state: &S, action: usize, theta: &PolicyParams<T>, weight: T, out: &mut [T]);

    fn score(&self, state: &S, action: usize, theta: &PolicyParams<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_params()];
        self.accumulate_score(state, action, theta, T::one(), &mut out);
        out
    }
}

/// A policy whose parameters are partitioned into blocks indexed by a map
/// `h(s)`, with the action law depending on the state only through its block.
pub trait BlockPolicy<T: Scalar> {
    fn num_blocks(&self) -> usize;

    fn num_actions(&self) -> usize;

    fn num_params(&self) -> usize;

    fn block_probabilities(&self, block: usize, theta: &PolicyParams<T>) -> ActionDistribution<T>;

    /// Adds `weight · ∇_θ log π(action | block, θ)` into `out`.
    fn accumulate_block_score(&self, block: usize, action: usize, theta: &PolicyParams<T>, weight: T, out: &mut [T]);
}

/// Tabular softmax: one logit per (block, action), laid out block-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSoftmax {
    pub blocks: usize,
    pub actions: usize,
}

impl BlockSoftmax {
    pub fn new(blocks: usize, actions: usize) -> Result<Self> {
        if blocks == 0 || actions == 0 {
            return Err(Error::Config(
                "block softmax needs at least one block and one action".into(),
            ));
        }
        Ok(BlockSoftmax { blocks, actions })
    }

    pub fn param_index(&self, block: usize, action: usize) -> usize {
        block * self.actions + action
    }

    fn check(&self, theta_len: usize) -> Result<()> {
        if theta_len != self.blocks * self.actions {
            return Err(Error::dims(
                "block softmax parameters",
                self.blocks * self.actions,
                theta_len,
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> BlockPolicy<T> for BlockSoftmax {
    fn num_blocks(&self) -> usize {
        self.blocks
    }

    fn num_actions(&self) -> usize {
        self.actions
    }

    fn num_params(&self) -> usize {
        self.blocks * self.actions
    }

    fn block_probabilities(&self, block: usize, theta: &PolicyParams<T>) -> ActionDistribution<T> {
        let start = self.param_index(block, 0);
        ActionDistribution::from_logits(&theta.as_slice()[start..start + self.actions])
    }

    fn accumulate_block_score(&self, block: usize, action: usize, theta: &PolicyParams<T>, weight: T, out: &mut [T]) {
        let probs = self.block_probabilities(block, theta);
        let start = self.param_index(block, 0);
        for (a, &p) in probs.probabilities().iter().enumerate() {
            let indicator = if a == action { T::one() } else { T::zero() };
            out[start + a] = out[start + a] + weight * (indicator - p);
        }
    }
}

/// `∇_θ log π(action | block, θ)` for the tabular softmax: `1{a = a'} − π(a' | block)`
/// on the block's parameters, zero elsewhere.
pub fn softmax_score<T: Scalar>(
    policy: &BlockSoftmax,
    block: usize,
    action: usize,
    theta: &PolicyParams<T>,
) -> Result<Vec<T>> {
    policy.check(theta.len())?;
    if block >= policy.blocks || action >= policy.actions {
        return Err(Error::Config(format!(
            "block {block} / action {action} out of range ({} blocks, {} actions)",
            policy.blocks, policy.actions
        )));
    }
    let mut out = vec![T::zero(); theta.len()];
    policy.accumulate_block_score(block, action, theta, T::one(), &mut out);
    Ok(out)
}

/// Exponential-family description of a controlled chain's stationary law.
///
/// `log_load_jacobian(θ)` is the `d × n` matrix `∂ log ρ_i / ∂ θ_j`.
pub trait ExpFamily<T: Scalar, S> {
    /// Dimension `d` of the sufficient statistics.
    fn stat_dim(&self) -> usize;

    /// Dimension `n` of the parameter vector.
    fn param_dim(&self) -> usize;

    fn sufficient_statistic_into(&self, state: &S, out: &mut [T]);

    fn sufficient_statistic(&self, state: &S) -> Vec<T> {
        let mut out = vec![T::zero(); self.stat_dim()];
        self.sufficient_statistic_into(state, &mut out);
        out
    }

    fn log_load_jacobian(&self, theta: &PolicyParams<T>) -> Matrix<T>;

    /// `log Φ(s)`, when known.
    fn balance_log(&self, _state: &S) -> Option<T> {
        None
    }

    /// `log ρ(θ)`, when known.
    fn log_load(&self, _theta: &PolicyParams<T>) -> Option<Vec<T>> {
        None
    }

    fn load(&self, theta: &PolicyParams<T>) -> Option<Vec<T>> {
        self.log_load(theta).map(|l| l.into_iter().map(T::exp).collect())
    }
}

/// `D log ρ(θ)ᵀ (x(s) − mean_stats)`: the gradient of `log p(s | θ)` when
/// `mean_stats = E[x(S)]` under the same θ.
pub fn stationary_score<T: Scalar, S, D: ExpFamily<T, S> + ?Sized>(
    state: &S,
    theta: &PolicyParams<T>,
    descriptor: &D,
    mean_stats: &[T],
) -> Result<Vec<T>> {
    if mean_stats.len() != descriptor.stat_dim() {
        return Err(Error::dims(
            "mean sufficient statistics",
            descriptor.stat_dim(),
            mean_stats.len(),
        ));
    }
    if theta.len() != descriptor.param_dim() {
        return Err(Error::dims(
            "stationary score parameters",
            descriptor.param_dim(),
            theta.len(),
        ));
    }
    let x = descriptor.sufficient_statistic(state);
    let centered: Vec<T> = x.iter().zip(mean_stats).map(|(&a, &b)| a - b).collect();
    descriptor.log_load_jacobian(theta).transpose_mul_vec(&centered)
}

/// `log Φ(s) + Σ_i x_i(s) log ρ_i(θ)`, the unnormalized log stationary mass.
pub fn log_unnormalized_mass<T: Scalar, S, D: ExpFamily<T, S> + ?Sized>(
    descriptor: &D,
    state: &S,
    theta: &PolicyParams<T>,
) -> Option<T> {
    let log_phi = descriptor.balance_log(state)?;
    let log_rho = descriptor.log_load(theta)?;
    let x = descriptor.sufficient_statistic(state);
    Some(x.iter().zip(&log_rho).fold(log_phi, |acc, (&xi, &lr)| {
        // 0 · (−inf) would be NaN; a zero statistic contributes nothing.
        if xi == T::zero() {
            acc
        } else {
            acc + xi * lr
        }
    }))
}
