//! Loss system of `n` parallel servers with a static random routing policy.
//!
//! At most `c` jobs may be present. Arriving jobs (rate λ) are admitted if
//! there is room and routed to server `i` with probability `softmax(θ)_i`;
//! the reward is 1 per admitted job. The stationary law is
//! `p(s | θ) ∝ Π_i (λ π_i(θ) / μ_i)^{s_i}` on `{s : Σ s_i ≤ c}`.

use rand::Rng;

use super::{sample_exp, Environment};
use crate::error::{Error, Result};
use crate::exp_family::{ActionDistribution, BlockPolicy, ExpFamily, Policy, PolicyParams};
use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, Scalar};

pub type Occupancy = Vec<u32>;

#[derive(Debug, Clone, PartialEq)]
pub struct LbParams<T> {
    pub capacity: u32,
    pub lambda: T,
    pub mu: Vec<T>,
}

impl<T: Scalar> LbParams<T> {
    pub fn new(capacity: u32, lambda: T, mu: Vec<T>) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("capacity must be at least 1".into()));
        }
        if mu.is_empty() {
            return Err(Error::Config("at least one server is required".into()));
        }
        if !(lambda > T::zero() && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if let Some(i) = mu.iter().position(|&m| !(m > T::zero() && m.is_finite())) {
            return Err(Error::Config(format!("mu[{i}] must be positive")));
        }
        Ok(LbParams { capacity, lambda, mu })
    }

    /// Four equal pools of `n/4` servers with rates `δ^0 .. δ^3`, arrival rate
    /// `load · Σ μ_i` and capacity `10 n / 4`.
    pub fn pools(n_servers: usize, delta: T, load: T) -> Result<Self> {
        if n_servers == 0 || !n_servers.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "pooled layout needs a positive multiple of 4 servers, got {n_servers}"
            )));
        }
        let per_pool = n_servers / 4;
        let mu: Vec<T> = (0..n_servers).map(|i| delta.powi((i / per_pool) as i32)).collect();
        let total: T = mu.iter().copied().sum();
        Self::new((10 * n_servers / 4) as u32, load * total, mu)
    }

    pub fn n_servers(&self) -> usize {
        self.mu.len()
    }
}

/// Admits the arriving job to `server` when there is room, then simulates
/// departures until the next arrival.
pub fn lb_transition<T: Scalar, R: Rng + ?Sized>(
    occupancy: &[u32],
    server: usize,
    params: &LbParams<T>,
    rng: &mut R,
) -> Result<(T, Occupancy)> {
    if occupancy.len() != params.n_servers() {
        return Err(Error::InvalidState(format!(
            "occupancy has {} entries for {} servers",
            occupancy.len(),
            params.n_servers()
        )));
    }
    if server >= params.n_servers() {
        return Err(Error::InvalidState(format!("server index {server} out of range")));
    }
    let total: u32 = occupancy.iter().sum();
    if total > params.capacity {
        return Err(Error::InvalidState(format!(
            "{total} jobs exceed capacity {}",
            params.capacity
        )));
    }
    let mut next = occupancy.to_vec();
    let reward = if total < params.capacity {
        next[server] += 1;
        T::one()
    } else {
        T::zero()
    };

    let mut remaining = sample_exp(rng, params.lambda);
    loop {
        let busy_rate = next
            .iter()
            .zip(&params.mu)
            .filter(|(&s, _)| s > 0)
            .fold(T::zero(), |acc, (_, &m)| acc + m);
        if busy_rate == T::zero() {
            break;
        }
        let dt = sample_exp(rng, busy_rate);
        if dt >= remaining {
            break;
        }
        remaining = remaining - dt;
        let u = T::lit(rng.random::<f64>()) * busy_rate;
        let mut acc = T::zero();
        let mut departing = None;
        for (i, (&s, &m)) in next.iter().zip(&params.mu).enumerate() {
            if s > 0 {
                acc = acc + m;
                departing = Some(i);
                if u < acc {
                    break;
                }
            }
        }
        if let Some(i) = departing {
            next[i] -= 1;
        }
    }
    Ok((reward, next))
}

/// Static softmax routing: `π(i | θ) = e^{θ_i} / Σ_j e^{θ_j}` in every state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaticSoftmax {
    pub n: usize,
}

impl StaticSoftmax {
    pub fn distribution<T: Scalar>(&self, theta: &PolicyParams<T>) -> ActionDistribution<T> {
        ActionDistribution::from_logits(theta.as_slice())
    }
}

impl<T: Scalar> Policy<T, Occupancy> for StaticSoftmax {
    fn num_params(&self) -> usize {
        self.n
    }

    fn probabilities(&self, _state: &Occupancy, theta: &PolicyParams<T>) -> ActionDistribution<T> {
        self.distribution(theta)
    }

    fn accumulate_score(&self, _state: &Occupancy, action: usize, theta: &PolicyParams<T>, weight: T, out: &mut [T]) {
        BlockPolicy::accumulate_block_score(self, 0, action, theta, weight, out);
    }
}

impl<T: Scalar> BlockPolicy<T> for StaticSoftmax {
    fn num_blocks(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        self.n
    }

    fn num_params(&self) -> usize {
        self.n
    }

    fn block_probabilities(&self, _block: usize, theta: &PolicyParams<T>) -> ActionDistribution<T> {
        self.distribution(theta)
    }

    fn accumulate_block_score(&self, _block: usize, action: usize, theta: &PolicyParams<T>, weight: T, out: &mut [T]) {
        let probs = self.distribution(theta);
        for (i, &p) in probs.probabilities().iter().enumerate() {
            let indicator = if i == action { T::one() } else { T::zero() };
            out[i] = out[i] + weight * (indicator - p);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbDescriptor<T> {
    params: LbParams<T>,
}

pub fn lb_descriptor<T: Scalar>(params: &LbParams<T>) -> LbDescriptor<T> {
    LbDescriptor { params: params.clone() }
}

impl<T: Scalar> ExpFamily<T, Occupancy> for LbDescriptor<T> {
    fn stat_dim(&self) -> usize {
        self.params.n_servers()
    }

    fn param_dim(&self) -> usize {
        self.params.n_servers()
    }

    fn sufficient_statistic_into(&self, state: &Occupancy, out: &mut [T]) {
        for (o, &s) in out.iter_mut().zip(state) {
            *o = T::from_count(s as usize);
        }
    }

    /// `I − 1 π(θ)ᵀ`.
    fn log_load_jacobian(&self, theta: &PolicyParams<T>) -> Matrix<T> {
        let n = self.params.n_servers();
        let pi = ActionDistribution::from_logits(theta.as_slice());
        let mut m = Matrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = m[(i, j)] - pi[j];
            }
        }
        m
    }

    fn balance_log(&self, state: &Occupancy) -> Option<T> {
        Some(state.iter().zip(&self.params.mu).fold(T::zero(), |acc, (&s, &m)| {
            acc + T::from_count(s as usize) * (self.params.lambda / m).ln()
        }))
    }

    fn log_load(&self, theta: &PolicyParams<T>) -> Option<Vec<T>> {
        let lse = log_sum_exp(theta.as_slice());
        Some(theta.as_slice().iter().map(|&t| t - lse).collect())
    }
}

#[derive(Debug, Clone)]
pub struct LoadBalancing<T> {
    pub params: LbParams<T>,
    descriptor: LbDescriptor<T>,
    policy: StaticSoftmax,
}

impl<T: Scalar> LoadBalancing<T> {
    pub fn new(params: LbParams<T>) -> Self {
        LoadBalancing {
            descriptor: lb_descriptor(&params),
            policy: StaticSoftmax { n: params.n_servers() },
            params,
        }
    }

    pub fn empty_state(&self) -> Occupancy {
        vec![0; self.params.n_servers()]
    }
}

impl<T: Scalar> Environment<T> for LoadBalancing<T> {
    type State = Occupancy;
    type Descriptor = LbDescriptor<T>;
    type Policy = StaticSoftmax;

    fn descriptor(&self) -> &LbDescriptor<T> {
        &self.descriptor
    }

    fn policy(&self) -> &StaticSoftmax {
        &self.policy
    }

    fn step<R: Rng + ?Sized>(&self, state: &Occupancy, action: usize, rng: &mut R) -> Result<(T, Occupancy)> {
        lb_transition(state, action, &self.params, rng)
    }

    fn block_policy(&self) -> Option<&dyn BlockPolicy<T>> {
        Some(&self.policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    fn small() -> LbParams<f64> {
        LbParams::new(2, 1.0, vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn full_system_blocks_admission() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (r, next) = lb_transition(&[1, 1], 0, &small(), &mut rng).unwrap();
            assert_eq!(r, 0.0);
            assert!(next[0] <= 1 && next[1] <= 1);
        }
    }

    #[test]
    fn empty_system_admits() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for i in 0..2 {
            let (r, next) = lb_transition(&[0, 0], i, &small(), &mut rng).unwrap();
            assert_eq!(r, 1.0);
            assert!(next.iter().sum::<u32>() <= 1);
            assert_eq!(next[1 - i], 0);
        }
    }

    #[test]
    fn invalid_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(lb_transition(&[2, 1], 0, &small(), &mut rng).is_err());
        assert!(lb_transition(&[0, 0], 2, &small(), &mut rng).is_err());
        assert!(lb_transition(&[0], 0, &small(), &mut rng).is_err());
    }

    #[test]
    fn occupancy_stays_within_capacity() {
        let p = LbParams::new(3, 5.0, vec![0.5, 1.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = vec![0, 0, 0];
        for t in 0..10_000 {
            let (r, next) = lb_transition(&s, t % 3, &p, &mut rng).unwrap();
            assert!(r == 0.0 || r == 1.0);
            assert!(next.iter().sum::<u32>() <= 3);
            s = next;
        }
    }

    #[test]
    fn descriptor_at_uniform_policy() {
        let p = LbParams::new(4, 1.0, vec![1.0; 4]).unwrap();
        let d = lb_descriptor(&p);
        let j = d.log_load_jacobian(&PolicyParams::zeros(4));
        for i in 0..4 {
            for k in 0..4 {
                let expected = if i == k { 0.75 } else { -0.25 };
                assert!(close(j[(i, k)], expected, 1e-15));
            }
        }
        let p3 = LbParams::new(4, 1.0, vec![1.0; 3]).unwrap();
        assert_eq!(
            lb_descriptor(&p3).sufficient_statistic(&vec![2, 0, 1]),
            vec![2.0, 0.0, 1.0]
        );
    }

    #[test]
    fn policy_weighted_jacobian_rows_vanish() {
        // πᵀ (I − 1πᵀ) = πᵀ − πᵀ = 0.
        let p = LbParams::new(4, 1.0, vec![1.0, 2.0, 3.0]).unwrap();
        let theta = PolicyParams::new(vec![0.4, -1.2, 2.0]).unwrap();
        let j = lb_descriptor(&p).log_load_jacobian(&theta);
        let pi = StaticSoftmax { n: 3 }.distribution(&theta);
        let row = j.transpose_mul_vec(pi.probabilities()).unwrap();
        assert!(row.iter().all(|&x| close(x, 0.0, 1e-12)));
    }

    #[test]
    fn pooled_layout() {
        let p = LbParams::pools(8, 2.0, 0.7).unwrap();
        assert_eq!(p.mu, vec![1.0, 1.0, 2.0, 2.0, 4.0, 4.0, 8.0, 8.0]);
        assert_eq!(p.capacity, 20);
        assert!(close(p.lambda, 0.7 * 30.0, 1e-12));
        assert!(LbParams::pools(6, 2.0, 0.7).is_err());
    }
}
