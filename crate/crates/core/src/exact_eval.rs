//! Exact objectives and brute-force oracles.
//!
//! The M/M/1 objective is evaluated in closed form (finite sums up to `k`
//! plus a geometric tail). The load-balancing objective uses Buzen's
//! convolution recursion, switching to a log-domain pass when the linear
//! table would overflow. Small chains are solved exactly by GTH elimination,
//! which avoids subtractions and so keeps every stationary probability
//! accurate to a few ulps relative to its own size, tail states included.

use std::fmt::Debug;

use crate::environments::ising::{ising_flip_probability, ising_reward, IsingParams, IsingState};
use crate::environments::load_balancing::{LbParams, Occupancy, StaticSoftmax};
use crate::environments::mm1::{mm1_stability_check, Mm1Params};
use crate::error::{Error, Result};
use crate::exp_family::{stationary_score, ExpFamily, PolicyParams};
use crate::linalg::Matrix;
use crate::scalar::{log_sum_exp, logistic, Scalar};

/// Largest lattice for which the Ising objective is enumerated.
pub const ISING_ENUMERATION_MAX_SITES: usize = 16;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

fn check_len<T: Scalar>(theta: &PolicyParams<T>, expected: usize, context: &'static str) -> Result<()> {
    if theta.len() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found: theta.len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------- M/M/1

/// `J(θ) = γ P{accept} − (η/λ) E[S]` under the stationary law of the
/// threshold policy.
pub fn mm1_exact_objective<T: Scalar>(theta: &PolicyParams<T>, params: &Mm1Params<T>) -> Result<T> {
    check_len(theta, params.k + 1, "M/M/1 parameters")?;
    if !mm1_stability_check(theta, params) {
        return Err(Error::Unstable(format!(
            "accept probability at level {} must stay below mu/lambda = {}",
            params.k,
            params.mu / params.lambda
        )));
    }
    let k = params.k;
    let traffic = params.traffic();
    let rho: Vec<T> = theta.as_slice().iter().map(|&t| logistic(t)).collect();

    // w(s) = Π_{i<s} (λ/μ) ρ_i for s ≤ k
    let mut z = T::zero();
    let mut accept = T::zero();
    let mut mean = T::zero();
    let mut w = T::one();
    for (s, &r) in rho.iter().enumerate().take(k) {
        z = z + w;
        accept = accept + w * r;
        mean = mean + T::from_count(s) * w;
        w = w * traffic * r;
    }
    let ratio = traffic * rho[k];
    let one = T::one();
    let tail = one / (one - ratio);
    z = z + w * tail;
    accept = accept + w * rho[k] * tail;
    // Σ_{j≥0} (k + j) r^j = k/(1−r) + r/(1−r)²
    mean = mean + w * tail * (T::from_count(k) + ratio * tail);

    let value = params.gamma * accept / z - params.eta / params.lambda * (mean / z);
    if !value.is_finite() {
        return Err(Error::NonFinite("M/M/1 objective".into()));
    }
    Ok(value)
}

/// Arrival-embedded M/M/1 chain on `{0, …, truncation}`: the policy decides
/// admission, admissions are refused at the truncation level, then a
/// geometric number of departures (capped by the queue) occurs before the
/// next arrival.
pub fn mm1_embedded_chain<T: Scalar>(
    theta: &PolicyParams<T>,
    params: &Mm1Params<T>,
    truncation: u64,
) -> Result<(Vec<u64>, Matrix<T>)> {
    check_len(theta, params.k + 1, "M/M/1 parameters")?;
    if truncation < 1 {
        return Err(Error::Config("truncation must be at least 1".into()));
    }
    let size = truncation as usize + 1;
    let total = params.lambda + params.mu;
    let arrive_first = params.lambda / total;
    let serve_first = params.mu / total;
    let mut p = Matrix::zeros(size, size);
    for s in 0..size {
        let accept = if s == size - 1 {
            T::zero()
        } else {
            logistic(theta[s.min(params.k)])
        };
        for (start, weight) in [(s + 1, accept), (s, T::one() - accept)] {
            if weight == T::zero() {
                continue;
            }
            // P(D = j) = arrive_first · serve_first^j for j < start; the
            // remaining mass empties the queue.
            let mut geo = T::one();
            for j in 0..start {
                p[(s, start - j)] = p[(s, start - j)] + weight * arrive_first * geo;
                geo = geo * serve_first;
            }
            p[(s, 0)] = p[(s, 0)] + weight * geo;
        }
    }
    Ok(((0..=truncation).collect(), p))
}

// ---------------------------------------------------------------- Buzen

/// Normalizing constants `G_{ĉ,n̂}` for `ĉ ∈ 0..=c`, `n̂ ∈ 1..=n`, stored either
/// directly or as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct BuzenArray<T> {
    capacity: usize,
    servers: usize,
    log_domain: bool,
    values: Vec<T>,
}

impl<T: Scalar> BuzenArray<T> {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn is_log_domain(&self) -> bool {
        self.log_domain
    }

    fn index(&self, c_hat: usize, n_hat: usize) -> usize {
        assert!(
            c_hat <= self.capacity && (1..=self.servers).contains(&n_hat),
            "Buzen index out of range"
        );
        c_hat * self.servers + n_hat - 1
    }

    /// `log G_{ĉ,n̂}`.
    pub fn log_g(&self, c_hat: usize, n_hat: usize) -> T {
        let v = self.values[self.index(c_hat, n_hat)];
        if self.log_domain {
            v
        } else {
            v.ln()
        }
    }

    /// `G_{ĉ,n̂}`; may be infinite when the table is held in log form.
    pub fn g(&self, c_hat: usize, n_hat: usize) -> T {
        let v = self.values[self.index(c_hat, n_hat)];
        if self.log_domain {
            v.exp()
        } else {
            v
        }
    }

    /// `Z(θ) = G_{c,n}`.
    pub fn normalizer(&self) -> T {
        self.g(self.capacity, self.servers)
    }

    pub fn log_normalizer(&self) -> T {
        self.log_g(self.capacity, self.servers)
    }
}

fn overflow_threshold<T: Scalar>() -> T {
    T::lit(1e280).min(T::max_value() * T::lit(1e-8))
}

fn lb_log_loads<T: Scalar>(theta: &PolicyParams<T>, params: &LbParams<T>) -> Result<Vec<T>> {
    check_len(theta, params.n_servers(), "load-balancing parameters")?;
    let lse = log_sum_exp(theta.as_slice());
    Ok(theta
        .as_slice()
        .iter()
        .zip(&params.mu)
        .map(|(&t, &m)| (params.lambda / m).ln() + t - lse)
        .collect())
}

/// Fills the Buzen table, falling back to the log-domain recursion when any
/// entry exceeds `1e280` (or the scalar type's equivalent).
pub fn buzen_normalizing_constants<T: Scalar>(theta: &PolicyParams<T>, params: &LbParams<T>) -> Result<BuzenArray<T>> {
    let log_a = lb_log_loads(theta, params)?;
    let (c, n) = (params.capacity as usize, params.n_servers());
    let a: Vec<T> = log_a.iter().map(|&l| l.exp()).collect();
    let threshold = overflow_threshold::<T>();
    let mut g = vec![T::one(); (c + 1) * n];
    let mut overflow = a.iter().any(|v| !v.is_finite());
    'fill: for c_hat in 1..=c {
        for n_hat in 1..=n {
            let prev = if n_hat == 1 { T::one() } else { g[c_hat * n + n_hat - 2] };
            let v = prev + a[n_hat - 1] * g[(c_hat - 1) * n + n_hat - 1];
            if !v.is_finite() || v > threshold {
                overflow = true;
                break 'fill;
            }
            g[c_hat * n + n_hat - 1] = v;
        }
    }
    if overflow {
        log::debug!("Buzen table exceeds {threshold}; switching to log domain");
        return buzen_log_domain(theta, params);
    }
    Ok(BuzenArray {
        capacity: c,
        servers: n,
        log_domain: false,
        values: g,
    })
}

fn log_add_exp<T: Scalar>(a: T, b: T) -> T {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// The same recursion carried out on logarithms.
pub fn buzen_log_domain<T: Scalar>(theta: &PolicyParams<T>, params: &LbParams<T>) -> Result<BuzenArray<T>> {
    let log_a = lb_log_loads(theta, params)?;
    let (c, n) = (params.capacity as usize, params.n_servers());
    let mut g = vec![T::zero(); (c + 1) * n];
    for c_hat in 1..=c {
        for n_hat in 1..=n {
            let prev = if n_hat == 1 {
                T::zero()
            } else {
                g[c_hat * n + n_hat - 2]
            };
            let v = log_add_exp(prev, log_a[n_hat - 1] + g[(c_hat - 1) * n + n_hat - 1]);
            if !v.is_finite() {
                return Err(Error::Overflow(format!("log G[{c_hat}][{n_hat}] is not finite")));
            }
            g[c_hat * n + n_hat - 1] = v;
        }
    }
    Ok(BuzenArray {
        capacity: c,
        servers: n,
        log_domain: true,
        values: g,
    })
}

/// Stationary admission probability `G_{c−1,n} / G_{c,n}`.
pub fn lb_exact_objective<T: Scalar>(theta: &PolicyParams<T>, params: &LbParams<T>) -> Result<T> {
    let table = buzen_normalizing_constants(theta, params)?;
    let (c, n) = (table.capacity(), table.servers());
    let value = if table.is_log_domain() {
        (table.log_g(c - 1, n) - table.log_g(c, n)).exp()
    } else {
        table.g(c - 1, n) / table.g(c, n)
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("load-balancing objective".into()));
    }
    Ok(value)
}

/// All occupancy vectors of `n` servers with at most `capacity` jobs in
/// total, in lexicographic order.
pub fn lb_states(n: usize, capacity: u32) -> Vec<Occupancy> {
    fn rec(prefix: &mut Vec<u32>, n: usize, left: u32, out: &mut Vec<Occupancy>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for s in 0..=left {
            prefix.push(s);
            rec(prefix, n, left - s, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), n, capacity, &mut out);
    out
}

/// `Z(θ)` by summing `Π_i (λ π_i / μ_i)^{s_i}` over every admissible state.
pub fn lb_normalizer_by_enumeration<T: Scalar>(theta: &PolicyParams<T>, params: &LbParams<T>) -> Result<T> {
    let log_a = lb_log_loads(theta, params)?;
    let terms: Vec<T> = lb_states(params.n_servers(), params.capacity)
        .iter()
        .map(|s| {
            s.iter()
                .zip(&log_a)
                .fold(T::zero(), |acc, (&si, &la)| acc + T::from_count(si as usize) * la)
        })
        .collect();
    Ok(log_sum_exp(&terms).exp())
}

/// Uniformized continuous-time load-balancing chain on `{s : Σ s_i ≤ c}`.
pub fn lb_uniformized_chain<T: Scalar>(
    theta: &PolicyParams<T>,
    params: &LbParams<T>,
) -> Result<(Vec<Occupancy>, Matrix<T>)> {
    check_len(theta, params.n_servers(), "load-balancing parameters")?;
    let states = lb_states(params.n_servers(), params.capacity);
    let position = |s: &[u32]| states.binary_search_by(|probe| probe.as_slice().cmp(s)).ok();
    let route = StaticSoftmax { n: params.n_servers() }.distribution(theta);
    let uniform_rate = params.lambda + params.mu.iter().copied().sum::<T>();
    let mut p = Matrix::zeros(states.len(), states.len());
    for (from, s) in states.iter().enumerate() {
        let occupied: u32 = s.iter().sum();
        let mut stay = T::one();
        let mut next = s.clone();
        for i in 0..s.len() {
            if occupied < params.capacity {
                next[i] += 1;
                let to = position(&next).ok_or_else(|| Error::InvalidState("arrival left the state space".into()))?;
                let prob = params.lambda * route[i] / uniform_rate;
                p[(from, to)] = p[(from, to)] + prob;
                stay = stay - prob;
                next[i] -= 1;
            }
            if s[i] > 0 {
                next[i] -= 1;
                let to = position(&next).ok_or_else(|| Error::InvalidState("departure left the state space".into()))?;
                let prob = params.mu[i] / uniform_rate;
                p[(from, to)] = p[(from, to)] + prob;
                stay = stay - prob;
                next[i] += 1;
            }
        }
        p[(from, from)] = p[(from, from)] + stay;
    }
    Ok((states, p))
}

// ---------------------------------------------------------------- Ising

fn check_enumerable<T: Scalar>(params: &IsingParams<T>) -> Result<()> {
    if params.sites() > ISING_ENUMERATION_MAX_SITES {
        return Err(Error::Config(format!(
            "Ising enumeration supports at most {ISING_ENUMERATION_MAX_SITES} sites, lattice has {}",
            params.sites()
        )));
    }
    Ok(())
}

/// Every spin configuration of the lattice, each with site 0 selected.
pub fn ising_configurations<T: Scalar>(params: &IsingParams<T>) -> Result<Vec<IsingState>> {
    check_enumerable(params)?;
    let sites = params.sites();
    (0u32..1 << sites)
        .map(|mask| {
            let spins = (0..sites).map(|v| if mask >> v & 1 == 1 { 1 } else { -1 }).collect();
            IsingState::new(params.d1, params.d2, spins, 0)
        })
        .collect()
}

fn ising_log_weights<T: Scalar, D: ExpFamily<T, IsingState>>(
    configs: &[IsingState],
    theta: &PolicyParams<T>,
    descriptor: &D,
) -> Result<Vec<T>> {
    let log_rho = descriptor
        .log_load(theta)
        .ok_or_else(|| Error::Config("descriptor has no load function".into()))?;
    Ok(configs
        .iter()
        .map(|c| {
            let x = descriptor.sufficient_statistic(c);
            x.iter().zip(&log_rho).fold(T::zero(), |acc, (&xi, &lr)| acc + xi * lr)
        })
        .collect())
}

/// Stationary expected reward `Σ_σ q(σ) r(σ)` by full enumeration.
pub fn ising_exact_objective<T: Scalar>(theta: &PolicyParams<T>, params: &IsingParams<T>) -> Result<T> {
    check_len(theta, 3, "Ising parameters")?;
    let configs = ising_configurations(params)?;
    let descriptor = crate::environments::ising::ising_descriptor(params);
    let logw = ising_log_weights(&configs, theta, &descriptor)?;
    let lse = log_sum_exp(&logw);
    Ok(configs.iter().zip(&logw).fold(T::zero(), |acc, (c, &lw)| {
        acc + (lw - lse).exp() * ising_reward(c, params)
    }))
}

/// Largest relative violation of `q(σ) P(σ→σ′) = q(σ′) P(σ′→σ)` over all
/// single-flip pairs.
pub fn ising_detailed_balance_error<T: Scalar>(theta: &PolicyParams<T>, params: &IsingParams<T>) -> Result<T> {
    check_len(theta, 3, "Ising parameters")?;
    let configs = ising_configurations(params)?;
    let descriptor = crate::environments::ising::ising_descriptor(params);
    let logw = ising_log_weights(&configs, theta, &descriptor)?;
    let lse = log_sum_exp(&logw);
    let sites = params.sites();
    let pick = T::one() / T::from_count(sites);
    let mut worst = T::zero();
    for (mask, config) in configs.iter().enumerate() {
        for v in 0..sites {
            let other = mask ^ (1 << v);
            if other < mask {
                continue;
            }
            let forward =
                (logw[mask] - lse).exp() * pick * ising_flip_probability(&config.clone().with_site(v), theta, params);
            let backward = (logw[other] - lse).exp()
                * pick
                * ising_flip_probability(&configs[other].clone().with_site(v), theta, params);
            let rel = (forward - backward).abs() / forward.max(backward);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Glauber chain over (configuration, selected site) pairs.
pub fn ising_glauber_chain<T: Scalar>(
    theta: &PolicyParams<T>,
    params: &IsingParams<T>,
) -> Result<(Vec<IsingState>, Matrix<T>)> {
    check_len(theta, 3, "Ising parameters")?;
    let configs = ising_configurations(params)?;
    let sites = params.sites();
    let pick = T::one() / T::from_count(sites);
    let states: Vec<IsingState> = configs
        .iter()
        .flat_map(|c| (0..sites).map(move |v| c.clone().with_site(v)))
        .collect();
    let mut p = Matrix::zeros(states.len(), states.len());
    for (mask, config) in configs.iter().enumerate() {
        for v in 0..sites {
            let from = mask * sites + v;
            let flip = ising_flip_probability(&config.clone().with_site(v), theta, params);
            let flipped = mask ^ (1 << v);
            for w in 0..sites {
                p[(from, flipped * sites + w)] = p[(from, flipped * sites + w)] + flip * pick;
                p[(from, mask * sites + w)] = p[(from, mask * sites + w)] + (T::one() - flip) * pick;
            }
        }
    }
    Ok((states, p))
}

// ---------------------------------------------------------------- oracles

/// Stationary law of a finite chain, aligned with its support.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution<T, S> {
    pub support: Vec<S>,
    pub probabilities: Vec<T>,
}

impl<T: Scalar, S> StationaryDistribution<T, S> {
    /// `max_j |(pᵀP)_j − p_j|`.
    pub fn residual(&self, transition: &Matrix<T>) -> T {
        let n = self.probabilities.len();
        let mut worst = T::zero();
        for j in 0..n {
            let flow = (0..n).fold(T::zero(), |acc, i| acc + self.probabilities[i] * transition[(i, j)]);
            worst = worst.max((flow - self.probabilities[j]).abs());
        }
        worst
    }

    pub fn expectation<F: Fn(&S) -> T>(&self, f: F) -> T {
        self.support
            .iter()
            .zip(&self.probabilities)
            .fold(T::zero(), |acc, (s, &p)| acc + p * f(s))
    }
}

fn row_sum_tolerance<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}

/// Solves `pᵀP = pᵀ`, `Σ p = 1` by GTH elimination and verifies the residual,
/// polishing with power iteration if it is too large. Reducible chains are
/// rejected.
pub fn brute_force_stationary<T: Scalar, S>(
    support: Vec<S>,
    transition: &Matrix<T>,
) -> Result<StationaryDistribution<T, S>> {
    let n = transition.rows();
    if transition.cols() != n {
        return Err(Error::dims("square transition matrix", n, transition.cols()));
    }
    if support.len() != n {
        return Err(Error::dims("stationary support", n, support.len()));
    }
    if n == 0 {
        return Err(Error::InvalidState("empty state space".into()));
    }
    let tol = row_sum_tolerance::<T>();
    for i in 0..n {
        let row = transition.row(i);
        if row.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
            return Err(Error::InvalidState(format!(
                "row {i} has a negative or non-finite entry"
            )));
        }
        let sum: T = row.iter().copied().sum();
        if (sum - T::one()).abs() > tol {
            return Err(Error::InvalidState(format!("row {i} sums to {sum}")));
        }
    }
    let tol = T::solve_tolerance();
    let dist = StationaryDistribution {
        support,
        probabilities: gth(transition)?,
    };
    let residual = dist.residual(transition);
    if residual < tol {
        return Ok(dist);
    }
    log::debug!("GTH residual {residual}; refining by power iteration");
    let dist = StationaryDistribution {
        probabilities: power_iteration(transition, dist.probabilities)?,
        support: dist.support,
    };
    let residual = dist.residual(transition);
    if !(residual < tol) {
        return Err(Error::NoConvergence(format!("stationary residual {residual}")));
    }
    Ok(dist)
}

fn gth<T: Scalar>(transition: &Matrix<T>) -> Result<Vec<T>> {
    let n = transition.rows();
    let mut a = transition.clone();
    for k in (1..n).rev() {
        let s: T = (0..k).fold(T::zero(), |acc, j| acc + a[(k, j)]);
        if !(s > T::zero()) {
            return Err(Error::NoConvergence(format!("chain is reducible at state {k}")));
        }
        for i in 0..k {
            a[(i, k)] = a[(i, k)] / s;
        }
        for i in 0..k {
            let aik = a[(i, k)];
            if aik == T::zero() {
                continue;
            }
            for j in 0..k {
                a[(i, j)] = a[(i, j)] + aik * a[(k, j)];
            }
        }
    }
    let mut p = vec![T::zero(); n];
    p[0] = T::one();
    for k in 1..n {
        p[k] = (0..k).fold(T::zero(), |acc, i| acc + p[i] * a[(i, k)]);
    }
    let total: T = p.iter().copied().sum();
    Ok(p.into_iter().map(|x| x / total).collect())
}

fn power_iteration<T: Scalar>(transition: &Matrix<T>, mut p: Vec<T>) -> Result<Vec<T>> {
    let n = transition.rows();
    let half = T::lit(0.5);
    for _ in 0..200_000 {
        // Lazy step so periodic chains still converge.
        let mut next = vec![T::zero(); n];
        for i in 0..n {
            for j in 0..n {
                next[j] = next[j] + p[i] * transition[(i, j)];
            }
        }
        let mut change = T::zero();
        for j in 0..n {
            let v = half * (p[j] + next[j]);
            change = change.max((v - p[j]).abs());
            p[j] = v;
        }
        if change < T::epsilon() * T::lit(4.0) {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence("power iteration did not settle".into()))
}

/// Central differences with step `h · max(1, |θ_i|)` per coordinate.
pub fn finite_difference_gradient<T, F>(objective: F, theta: &PolicyParams<T>, h: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(&PolicyParams<T>) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    (0..theta.len())
        .map(|i| {
            let step = h * T::one().max(theta[i].abs());
            let up = objective(&theta.perturbed(i, step)?)?;
            let down = objective(&theta.perturbed(i, -step)?)?;
            Ok((up - down) / (step + step))
        })
        .collect()
}

/// Largest discrepancy between `stationary_score` (with the exact mean
/// statistic) and central differences of `log p(s | θ)`, where `p` is solved
/// by brute force on the chain produced by `chain`.
pub fn verify_score_identity<T, S, D, C>(descriptor: &D, theta: &PolicyParams<T>, chain: C, h: T) -> Result<T>
where
    T: Scalar,
    S: PartialEq + Debug,
    D: ExpFamily<T, S> + ?Sized,
    C: Fn(&PolicyParams<T>) -> Result<(Vec<S>, Matrix<T>)>,
{
    let solve = |th: &PolicyParams<T>| -> Result<StationaryDistribution<T, S>> {
        let (support, p) = chain(th)?;
        brute_force_stationary(support, &p)
    };
    let base = solve(theta)?;
    let d = descriptor.stat_dim();
    let mut mean = vec![T::zero(); d];
    let mut x = vec![T::zero(); d];
    for (s, &p) in base.support.iter().zip(&base.probabilities) {
        descriptor.sufficient_statistic_into(s, &mut x);
        for (m, &xi) in mean.iter_mut().zip(&x) {
            *m = *m + p * xi;
        }
    }
    let scores: Vec<Vec<T>> = base
        .support
        .iter()
        .map(|s| stationary_score(s, theta, descriptor, &mean))
        .collect::<Result<_>>()?;

    let mut worst = T::zero();
    for i in 0..theta.len() {
        let step = h * T::one().max(theta[i].abs());
        let up = solve(&theta.perturbed(i, step)?)?;
        let down = solve(&theta.perturbed(i, -step)?)?;
        if up.support != base.support || down.support != base.support {
            return Err(Error::InvalidState("chain support changed under perturbation".into()));
        }
        for (j, score) in scores.iter().enumerate() {
            let fd = (up.probabilities[j].ln() - down.probabilities[j].ln()) / (step + step);
            worst = worst.max((fd - score[i]).abs());
        }
    }
    Ok(worst)
}
