//! Controlled Markov chains with product-form stationary distributions.
//!
//! Each environment bundles a transition sampler, a policy parametrization
//! and the exponential-family descriptor of its stationary law.

use std::fmt::Debug;
use std::hash::Hash;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::Result;
use crate::exp_family::{BlockPolicy, ExpFamily, Policy};
use crate::scalar::Scalar;

pub mod ising;
pub mod load_balancing;
pub mod mm1;

pub trait Environment<T: Scalar> {
    type State: Clone + Eq + Hash + Debug + Send;
    type Descriptor: ExpFamily<T, Self::State>;
    type Policy: Policy<T, Self::State>;

    fn descriptor(&self) -> &Self::Descriptor;

    fn policy(&self) -> &Self::Policy;

    fn num_params(&self) -> usize {
        self.policy().num_params()
    }

    /// Applies `action` in `state`; returns the reward and the next state.
    /// Environment randomness is drawn from `rng` after the caller's policy draw.
    fn step<R: Rng + ?Sized>(&self, state: &Self::State, action: usize, rng: &mut R) -> Result<(T, Self::State)>;

    /// Block view of the policy, when it has one (needed for KL regularization).
    fn block_policy(&self) -> Option<&dyn BlockPolicy<T>> {
        None
    }
}

/// Exponential variate with the given rate.
pub(crate) fn sample_exp<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rate: T) -> T {
    let e: f64 = rng.sample(Exp1);
    T::lit(e) / rate
}
