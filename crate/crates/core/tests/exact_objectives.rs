//! Closed-form M/M/1 objective against optimization targets and a brute-force
//! stationary solve of the embedded chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sage_core::environments::mm1::mm1_stability_check;
use sage_core::exact_eval::{brute_force_stationary, mm1_embedded_chain, mm1_exact_objective};
use sage_core::{Mm1Params, PolicyParams};

fn params(lambda: f64, k: usize) -> Mm1Params<f64> {
    Mm1Params::new(lambda, 1.0, 5.0, 1.0, k).unwrap()
}

fn j(theta: &[f64], p: &Mm1Params<f64>) -> f64 {
    mm1_exact_objective(&PolicyParams::new(theta.to_vec()).unwrap(), p).unwrap()
}

/// Maximizes a unimodal-on-grid scalar function on `[lo, hi]` by a grid scan
/// followed by golden-section refinement.
fn maximize_scalar<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> (f64, f64) {
    let n = 2000;
    let grid: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let best = (0..=n).max_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b]))).unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n)]);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[test]
fn k0_optimum_light_traffic() {
    let p = params(0.7, 0);
    let (_, best) = maximize_scalar(|t| j(&[t], &p), -20.0, 20.0);
    assert!((best - 2.183).abs() < 1e-3, "{best}");
}

#[test]
fn k0_optimum_heavy_traffic() {
    let p = params(1.4, 0);
    // Stable iff σ(θ) < 1/1.4.
    let edge = ((1.0 / 1.4) / (1.0 - 1.0 / 1.4f64)).ln();
    let (_, best) = maximize_scalar(|t| j(&[t], &p), -20.0, edge - 1e-9);
    assert!((best - 1.091).abs() < 1e-3, "{best}");
}

#[test]
fn best_deterministic_threshold() {
    // Accept iff s < m, for m = 0..6, with k = 6 saturated logits.
    let p = params(0.7, 6);
    let values: Vec<f64> = (0..=6)
        .map(|m| {
            let theta: Vec<f64> = (0..=6).map(|i| if i < m { 40.0 } else { -40.0 }).collect();
            j(&theta, &p)
        })
        .collect();
    let best = values.iter().cloned().fold(f64::MIN, f64::max);
    assert!((best - 2.795).abs() < 1e-3, "{values:?}");
    assert_eq!(values.iter().position(|&v| v == best), Some(3));
}

#[test]
fn heavy_traffic_k2_saturated() {
    let value = j(&[40.0, 40.0, -40.0], &params(1.4, 2));
    assert!((value - 1.880).abs() < 1e-3, "{value}");
}

#[test]
fn saturation_limit_is_continuous() {
    let p = params(0.7, 3);
    let a = j(&[40.0, 40.0, 40.0, -40.0], &p);
    let b = j(&[80.0, 80.0, 80.0, -80.0], &p);
    assert!((a - b).abs() < 1e-10);
}

/// Draws a random θ whose tail ratio `(λ/μ)σ(θ_k)` stays below 0.9.
fn stable_theta(rng: &mut ChaCha8Rng, p: &Mm1Params<f64>) -> Vec<f64> {
    loop {
        let theta: Vec<f64> = (0..=p.k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let tail = p.lambda / p.mu / (1.0 + (-theta[p.k]).exp());
        if tail < 0.9 {
            return theta;
        }
    }
}

#[test]
fn closed_form_matches_truncated_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (lambda, k) in [(0.7, 0), (0.7, 2), (1.4, 1), (1.4, 3)] {
        let p = params(lambda, k);
        for _ in 0..5 {
            let theta = PolicyParams::new(stable_theta(&mut rng, &p)).unwrap();
            assert!(mm1_stability_check(&theta, &p));
            // Tail ratio below 0.9: 0.9^400 is far below 1e-12.
            let (support, chain) = mm1_embedded_chain(&theta, &p, 400).unwrap();
            let dist = brute_force_stationary(support, &chain).unwrap();
            let accept = dist.expectation(|&s| {
                if s == 400 {
                    0.0
                } else {
                    1.0 / (1.0 + (-theta[(s as usize).min(k)]).exp())
                }
            });
            let mean = dist.expectation(|&s| s as f64);
            let brute = 5.0 * accept - mean / lambda;
            let exact = mm1_exact_objective(&theta, &p).unwrap();
            assert!(
                ((brute - exact) / exact).abs() < 1e-8,
                "λ={lambda} k={k}: {brute} vs {exact}"
            );
        }
    }
}

#[test]
fn embedded_chain_matches_product_form() {
    let p = params(0.7, 1);
    let theta = PolicyParams::zeros(2);
    let (support, chain) = mm1_embedded_chain(&theta, &p, 60).unwrap();
    let dist = brute_force_stationary(support, &chain).unwrap();
    // p(s) ∝ Π_{i<s} (λ/μ) σ(θ_{min(i,k)}) = 0.35^s at θ = 0.
    let weights: Vec<f64> = (0..=60).map(|s| 0.35f64.powi(s)).collect();
    let z: f64 = weights.iter().sum();
    for (s, (&w, &q)) in weights.iter().zip(&dist.probabilities).enumerate() {
        assert!((w / z - q).abs() < 1e-9, "state {s}");
    }
}

#[test]
fn birth_death_chain_is_geometric() {
    // Up 0.5, down 1 per unit time, uniformized at rate 1.5.
    let n = 51;
    let mut rows = vec![vec![0.0; n]; n];
    for s in 0..n {
        if s + 1 < n {
            rows[s][s + 1] = 0.5 / 1.5;
        }
        if s > 0 {
            rows[s][s - 1] = 1.0 / 1.5;
        }
        rows[s][s] = 1.0 - rows[s].iter().sum::<f64>();
    }
    let chain = sage_core::Matrix::from_rows(rows).unwrap();
    let dist = brute_force_stationary((0..n).collect(), &chain).unwrap();
    let z: f64 = (0..n).map(|s| 0.5f64.powi(s as i32)).sum();
    for s in 0..n {
        let expected = 0.5f64.powi(s as i32) / z;
        assert!(((dist.probabilities[s] - expected) / expected).abs() < 1e-10);
    }
    assert!(dist.residual(&chain) < 1e-10);
}

#[test]
fn single_precision_agrees() {
    let p32 = Mm1Params::<f32>::new(0.7, 1.0, 5.0, 1.0, 2).unwrap();
    let theta32 = PolicyParams::<f32>::new(vec![0.5, -0.3, 0.1]).unwrap();
    let v32 = mm1_exact_objective(&theta32, &p32).unwrap();
    let v64 = j(&[0.5, -0.3, 0.1], &params(0.7, 2));
    assert!((f64::from(v32) - v64).abs() < 1e-5);
}
