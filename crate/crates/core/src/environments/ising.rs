//! Glauber dynamics on a `d1 × d2` Ising lattice with open boundaries.
//!
//! The agent sets the inverse temperature `β = 1 + tanh θ₁` and the left and
//! right external fields `h_left = tanh θ₂`, `h_right = tanh θ₃`. At each
//! step a site is chosen uniformly and its spin flips with probability
//! `1 / (1 + e^δ)`, `δ = 2βσ(v)(J Σ_{w∼v} σ(w) + μ h(v))`. The stationary law
//! is `∝ exp(β (J I(σ) + μ h_left M_left(σ) + μ h_right M_right(σ)))`.
//!
//! Site `(r, c)` (0-based) belongs to the left half iff `2(c + 1) ≤ d2`.

use rand::Rng;

use super::Environment;
use crate::error::{Error, Result};
use crate::exp_family::{ActionDistribution, ExpFamily, Policy, PolicyParams};
use crate::linalg::Matrix;
use crate::scalar::{logistic, Scalar};

pub const FLIP: usize = 0;
pub const NOT_FLIP: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IsingParams<T> {
    pub d1: usize,
    pub d2: usize,
    pub coupling: T,
    pub moment: T,
    pub xi_left: T,
    pub xi_right: T,
}

impl<T: Scalar> IsingParams<T> {
    pub fn new(d1: usize, d2: usize, coupling: T, moment: T, xi_left: T, xi_right: T) -> Result<Self> {
        if d1 < 2 || d2 < 2 {
            return Err(Error::Config(format!("lattice must be at least 2x2, got {d1}x{d2}")));
        }
        if !coupling.is_finite() {
            return Err(Error::Config("coupling must be finite".into()));
        }
        if !(moment >= T::zero() && moment.is_finite()) {
            return Err(Error::Config(format!("moment must be nonnegative, got {moment}")));
        }
        for (name, xi) in [("xi_left", xi_left), ("xi_right", xi_right)] {
            if !(xi >= -T::one() && xi <= T::one()) {
                return Err(Error::Config(format!("{name} must lie in [-1, 1], got {xi}")));
            }
        }
        Ok(IsingParams {
            d1,
            d2,
            coupling,
            moment,
            xi_left,
            xi_right,
        })
    }

    pub fn sites(&self) -> usize {
        self.d1 * self.d2
    }

    pub fn is_left(&self, site: usize) -> bool {
        2 * (site % self.d2 + 1) <= self.d2
    }
}

/// Spin configuration plus the currently selected site, with cached
/// interaction sum and half magnetizations.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IsingState {
    rows: usize,
    cols: usize,
    spins: Vec<i8>,
    site: usize,
    interaction: i64,
    mag_left: i64,
    mag_right: i64,
}

impl IsingState {
    pub fn new(rows: usize, cols: usize, spins: Vec<i8>, site: usize) -> Result<Self> {
        if spins.len() != rows * cols {
            return Err(Error::InvalidState(format!(
                "{} spins for a {rows}x{cols} lattice",
                spins.len()
            )));
        }
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidState("spins must be +1 or -1".into()));
        }
        if site >= spins.len() {
            return Err(Error::InvalidState(format!("site {site} out of bounds")));
        }
        let mut state = IsingState {
            rows,
            cols,
            spins,
            site,
            interaction: 0,
            mag_left: 0,
            mag_right: 0,
        };
        state.recompute();
        Ok(state)
    }

    /// Left half all `+1`, right half all `−1`.
    pub fn split<T: Scalar>(params: &IsingParams<T>, site: usize) -> Result<Self> {
        let spins = (0..params.sites())
            .map(|v| if params.is_left(v) { 1 } else { -1 })
            .collect();
        Self::new(params.d1, params.d2, spins, site)
    }

    pub fn uniform(rows: usize, cols: usize, spin: i8, site: usize) -> Result<Self> {
        Self::new(rows, cols, vec![spin; rows * cols], site)
    }

    fn recompute(&mut self) {
        let (rows, cols) = (self.rows, self.cols);
        let mut interaction = 0i64;
        let (mut left, mut right) = (0i64, 0i64);
        for r in 0..rows {
            for c in 0..cols {
                let s = i64::from(self.spins[r * cols + c]);
                if c + 1 < cols {
                    interaction += s * i64::from(self.spins[r * cols + c + 1]);
                }
                if r + 1 < rows {
                    interaction += s * i64::from(self.spins[(r + 1) * cols + c]);
                }
                if 2 * (c + 1) <= cols {
                    left += s;
                } else {
                    right += s;
                }
            }
        }
        self.interaction = interaction;
        self.mag_left = left;
        self.mag_right = right;
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn site(&self) -> usize {
        self.site
    }

    pub fn with_site(mut self, site: usize) -> Self {
        self.site = site;
        self
    }

    /// `I(σ)`: sum of `σ(v)σ(w)` over neighbor pairs, each pair once.
    pub fn interaction(&self) -> i64 {
        self.interaction
    }

    pub fn mag_left(&self) -> i64 {
        self.mag_left
    }

    pub fn mag_right(&self) -> i64 {
        self.mag_right
    }

    pub fn neighbor_sum(&self, site: usize) -> i64 {
        let (r, c) = (site / self.cols, site % self.cols);
        let mut sum = 0i64;
        if r > 0 {
            sum += i64::from(self.spins[site - self.cols]);
        }
        if r + 1 < self.rows {
            sum += i64::from(self.spins[site + self.cols]);
        }
        if c > 0 {
            sum += i64::from(self.spins[site - 1]);
        }
        if c + 1 < self.cols {
            sum += i64::from(self.spins[site + 1]);
        }
        sum
    }

    /// Flips the spin at `site`, keeping the cached statistics in sync.
    pub fn flip(&mut self, site: usize) {
        let s = i64::from(self.spins[site]);
        self.interaction -= 2 * s * self.neighbor_sum(site);
        if 2 * (site % self.cols + 1) <= self.cols {
            self.mag_left -= 2 * s;
        } else {
            self.mag_right -= 2 * s;
        }
        self.spins[site] = -self.spins[site];
    }
}

struct Controls<T> {
    beta: T,
    dbeta: T,
    h_left: T,
    dh_left: T,
    h_right: T,
    dh_right: T,
}

fn controls<T: Scalar>(theta: &PolicyParams<T>) -> Controls<T> {
    let (t1, t2, t3) = (theta[0].tanh(), theta[1].tanh(), theta[2].tanh());
    Controls {
        beta: T::one() + t1,
        dbeta: T::one() - t1 * t1,
        h_left: t2,
        dh_left: T::one() - t2 * t2,
        h_right: t3,
        dh_right: T::one() - t3 * t3,
    }
}

fn local_field<T: Scalar>(state: &IsingState, params: &IsingParams<T>, c: &Controls<T>) -> (T, bool) {
    let v = state.site;
    let left = params.is_left(v);
    let h = if left { c.h_left } else { c.h_right };
    let field = params.coupling * T::lit(state.neighbor_sum(v) as f64) + params.moment * h;
    (field, left)
}

/// `δ(s | θ)`.
pub fn flip_exponent<T: Scalar>(state: &IsingState, theta: &PolicyParams<T>, params: &IsingParams<T>) -> T {
    let c = controls(theta);
    let (field, _) = local_field(state, params, &c);
    let sigma = T::lit(f64::from(state.spins[state.site]));
    T::lit(2.0) * c.beta * sigma * field
}

/// Probability of flipping the spin at the selected site.
pub fn ising_flip_probability<T: Scalar>(state: &IsingState, theta: &PolicyParams<T>, params: &IsingParams<T>) -> T {
    logistic(-flip_exponent(state, theta, params))
}

/// `−|ξ_left − 2 M_left / (d1 d2)| − |ξ_right − 2 M_right / (d1 d2)|`.
pub fn ising_reward<T: Scalar>(state: &IsingState, params: &IsingParams<T>) -> T {
    let scale = T::lit(2.0) / T::from_count(params.sites());
    let ml = scale * T::lit(state.mag_left as f64);
    let mr = scale * T::lit(state.mag_right as f64);
    -(params.xi_left - ml).abs() - (params.xi_right - mr).abs()
}

/// Applies the flip decision at the selected site, draws the next site
/// uniformly, and rewards the resulting configuration.
pub fn ising_transition<T: Scalar, R: Rng + ?Sized>(
    state: &IsingState,
    flip: bool,
    params: &IsingParams<T>,
    rng: &mut R,
) -> (T, IsingState) {
    let mut next = state.clone();
    if flip {
        next.flip(state.site);
    }
    next.site = rng.random_range(0..params.sites());
    (ising_reward(&next, params), next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlauberPolicy<T> {
    params: IsingParams<T>,
}

impl<T: Scalar> Policy<T, IsingState> for GlauberPolicy<T> {
    fn num_params(&self) -> usize {
        3
    }

    fn probabilities(&self, state: &IsingState, theta: &PolicyParams<T>) -> ActionDistribution<T> {
        ActionDistribution::binary_logit(-flip_exponent(state, theta, &self.params))
    }

    /// `(1{a = notflip} − π(notflip)) ∇δ`.
    fn accumulate_score(&self, state: &IsingState, action: usize, theta: &PolicyParams<T>, weight: T, out: &mut [T]) {
        let c = controls(theta);
        let (field, left) = local_field(state, &self.params, &c);
        let sigma = T::lit(f64::from(state.spins[state.site]));
        let two = T::lit(2.0);
        let delta = two * c.beta * sigma * field;
        let p_notflip = logistic(delta);
        let indicator = if action == NOT_FLIP { T::one() } else { T::zero() };
        let coef = weight * (indicator - p_notflip);
        out[0] = out[0] + coef * two * c.dbeta * sigma * field;
        let field_grad = two * c.beta * sigma * self.params.moment;
        if left {
            out[1] = out[1] + coef * field_grad * c.dh_left;
        } else {
            out[2] = out[2] + coef * field_grad * c.dh_right;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsingDescriptor<T> {
    params: IsingParams<T>,
}

pub fn ising_descriptor<T: Scalar>(params: &IsingParams<T>) -> IsingDescriptor<T> {
    IsingDescriptor { params: params.clone() }
}

impl<T: Scalar> ExpFamily<T, IsingState> for IsingDescriptor<T> {
    fn stat_dim(&self) -> usize {
        3
    }

    fn param_dim(&self) -> usize {
        3
    }

    fn sufficient_statistic_into(&self, state: &IsingState, out: &mut [T]) {
        out[0] = T::lit(state.interaction as f64);
        out[1] = T::lit(state.mag_left as f64);
        out[2] = T::lit(state.mag_right as f64);
    }

    fn log_load_jacobian(&self, theta: &PolicyParams<T>) -> Matrix<T> {
        let c = controls(theta);
        let (j, mu) = (self.params.coupling, self.params.moment);
        let mut m = Matrix::zeros(3, 3);
        m[(0, 0)] = c.dbeta * j;
        m[(1, 0)] = c.dbeta * mu * c.h_left;
        m[(1, 1)] = c.beta * mu * c.dh_left;
        m[(2, 0)] = c.dbeta * mu * c.h_right;
        m[(2, 2)] = c.beta * mu * c.dh_right;
        m
    }

    fn balance_log(&self, _state: &IsingState) -> Option<T> {
        Some(T::zero())
    }

    fn log_load(&self, theta: &PolicyParams<T>) -> Option<Vec<T>> {
        let c = controls(theta);
        let (j, mu) = (self.params.coupling, self.params.moment);
        Some(vec![c.beta * j, c.beta * mu * c.h_left, c.beta * mu * c.h_right])
    }
}

#[derive(Debug, Clone)]
pub struct Ising<T> {
    pub params: IsingParams<T>,
    descriptor: IsingDescriptor<T>,
    policy: GlauberPolicy<T>,
}

impl<T: Scalar> Ising<T> {
    pub fn new(params: IsingParams<T>) -> Self {
        Ising {
            descriptor: ising_descriptor(&params),
            policy: GlauberPolicy { params: params.clone() },
            params,
        }
    }
}

impl<T: Scalar> Environment<T> for Ising<T> {
    type State = IsingState;
    type Descriptor = IsingDescriptor<T>;
    type Policy = GlauberPolicy<T>;

    fn descriptor(&self) -> &IsingDescriptor<T> {
        &self.descriptor
    }

    fn policy(&self) -> &GlauberPolicy<T> {
        &self.policy
    }

    fn step<R: Rng + ?Sized>(&self, state: &IsingState, action: usize, rng: &mut R) -> Result<(T, IsingState)> {
        if action > NOT_FLIP {
            return Err(Error::InvalidState(format!("spin action {action}")));
        }
        Ok(ising_transition(state, action == FLIP, &self.params, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(d1: usize, d2: usize) -> IsingParams<f64> {
        IsingParams::new(d1, d2, 1.0, 1.0, -1.0, 1.0).unwrap()
    }

    #[test]
    fn interior_site_all_aligned() {
        let p = params(3, 3);
        let s = IsingState::uniform(3, 3, 1, 4).unwrap();
        let pf = ising_flip_probability(&s, &PolicyParams::zeros(3), &p);
        assert!((pf - 1.0 / (1.0 + 8f64.exp())).abs() < 1e-15);
        assert!((pf - 3.354e-4).abs() < 1e-7);
        assert!(pf > 1.0 / (1.0 + 10f64.exp()) && pf < 1.0 / (1.0 + 6f64.exp()));
    }

    #[test]
    fn corner_site_has_two_neighbors() {
        let p = params(3, 3);
        let s = IsingState::uniform(3, 3, 1, 0).unwrap();
        assert_eq!(s.neighbor_sum(0), 2);
        let pf = ising_flip_probability(&s, &PolicyParams::zeros(3), &p);
        assert!((pf - 0.01799).abs() < 5e-6);
    }

    #[test]
    fn balanced_neighbors_flip_with_half() {
        // Site 4 on a 3x3 lattice with neighbors (+1, +1, −1, −1).
        let spins = vec![1, 1, 1, 1, 1, -1, 1, -1, 1];
        let s = IsingState::new(3, 3, spins, 4).unwrap();
        assert_eq!(s.neighbor_sum(4), 0);
        assert_eq!(ising_flip_probability(&s, &PolicyParams::zeros(3), &params(3, 3)), 0.5);
    }

    #[test]
    fn sufficient_statistics_small_lattices() {
        let p = params(2, 2);
        let d = ising_descriptor(&p);
        let up = IsingState::uniform(2, 2, 1, 0).unwrap();
        assert_eq!(d.sufficient_statistic(&up), vec![4.0, 2.0, 2.0]);
        let checker = IsingState::new(2, 2, vec![1, -1, -1, 1], 0).unwrap();
        assert_eq!(d.sufficient_statistic(&checker), vec![-4.0, 0.0, 0.0]);
    }

    #[test]
    fn jacobian_at_zero() {
        let p = IsingParams::new(2, 2, 1.5, 0.7, 0.0, 0.0).unwrap();
        let j = ising_descriptor(&p).log_load_jacobian(&PolicyParams::zeros(3));
        assert_eq!(j, Matrix::diagonal(&[1.5, 0.7, 0.7]));
    }

    #[test]
    fn split_start_reward_is_minus_four() {
        let p = params(10, 20);
        let s = IsingState::split(&p, 0).unwrap();
        assert_eq!(s.mag_left(), 100);
        assert_eq!(s.mag_right(), -100);
        assert!((ising_reward(&s, &p) + 4.0).abs() < 1e-12);
        let target = IsingState::new(10, 20, s.spins().iter().map(|&x| -x).collect(), 0).unwrap();
        assert_eq!(ising_reward(&target, &p), 0.0);
    }

    #[test]
    fn notflip_only_resamples_site() {
        let p = params(4, 4);
        let s = IsingState::split(&p, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, next) = ising_transition(&s, false, &p, &mut rng);
        assert_eq!(next.spins(), s.spins());
    }

    #[test]
    fn incremental_statistics_match_recompute() {
        let p = params(5, 7);
        let mut s = IsingState::split(&p, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..2000 {
            let site = rng.random_range(0..35);
            s.flip(site);
            let fresh = IsingState::new(5, 7, s.spins().to_vec(), 0).unwrap();
            assert_eq!(
                (s.interaction(), s.mag_left(), s.mag_right()),
                (fresh.interaction(), fresh.mag_left(), fresh.mag_right())
            );
        }
    }

    #[test]
    fn odd_width_middle_column_is_right() {
        // 2(c+1) ≤ d2 with d2 = 3: only column 0 is left.
        let p = params(2, 3);
        assert!(p.is_left(0));
        assert!(!p.is_left(1));
        assert!(!p.is_left(2));
    }

    #[test]
    fn rejects_bad_params_and_states() {
        assert!(IsingParams::new(1, 4, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(IsingParams::new(2, 2, 1.0, -1.0, 0.0, 0.0).is_err());
        assert!(IsingParams::new(2, 2, 1.0, 1.0, 1.5, 0.0).is_err());
        assert!(IsingState::new(2, 2, vec![1, 0, 1, 1], 0).is_err());
        assert!(IsingState::new(2, 2, vec![1; 4], 4).is_err());
    }
}
