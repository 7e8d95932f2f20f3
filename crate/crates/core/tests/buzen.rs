//! Buzen's recursion against direct enumeration of the loss-system states.

use proptest::prelude::*;
use sage_core::exact_eval::{
    buzen_log_domain, buzen_normalizing_constants, lb_exact_objective, lb_normalizer_by_enumeration, lb_states,
};
use sage_core::{LbParams, PolicyParams};

/// `Σ_{Σ s ≤ c} Π_i (λ π_i / μ_i)^{s_i}` computed term by term in linear space.
fn enumerate(theta: &[f64], lambda: f64, mu: &[f64], c: u32) -> f64 {
    let m = theta.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = theta.iter().map(|t| (t - m).exp()).sum();
    let a: Vec<f64> = theta
        .iter()
        .zip(mu)
        .map(|(t, mu)| lambda * (t - m).exp() / z / mu)
        .collect();
    lb_states(mu.len(), c)
        .iter()
        .map(|s| s.iter().zip(&a).map(|(&si, ai)| ai.powi(si as i32)).product::<f64>())
        .sum()
}

fn instance() -> impl Strategy<Value = (Vec<f64>, f64, Vec<f64>, u32)> {
    (1usize..=3, 1u32..=4).prop_flat_map(|(n, c)| {
        (
            prop::collection::vec(-2.0f64..2.0, n),
            0.1f64..5.0,
            prop::collection::vec(0.2f64..4.0, n),
            Just(c),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(240))]

    #[test]
    fn normalizer_matches_enumeration((theta, lambda, mu, c) in instance()) {
        let params = LbParams::new(c, lambda, mu.clone()).unwrap();
        let th = PolicyParams::new(theta.clone()).unwrap();
        let g = buzen_normalizing_constants(&th, &params).unwrap();
        let z = enumerate(&theta, lambda, &mu, c);
        prop_assert!(((g.normalizer() - z) / z).abs() < 1e-12);
        let z2 = lb_normalizer_by_enumeration(&th, &params).unwrap();
        prop_assert!(((z2 - z) / z).abs() < 1e-12);
    }

    #[test]
    fn table_is_monotone_and_anchored((theta, lambda, mu, c) in instance()) {
        let params = LbParams::new(c, lambda, mu.clone()).unwrap();
        let g = buzen_normalizing_constants(&PolicyParams::new(theta).unwrap(), &params).unwrap();
        for n in 1..=mu.len() {
            prop_assert_eq!(g.g(0, n), 1.0);
            for ch in 1..=c as usize {
                prop_assert!(g.g(ch, n) >= g.g(ch - 1, n));
                prop_assert!(g.g(ch, n) > 0.0);
            }
        }
    }

    #[test]
    fn objective_is_a_probability((theta, lambda, mu, c) in instance()) {
        let params = LbParams::new(c, lambda, mu).unwrap();
        let j = lb_exact_objective(&PolicyParams::new(theta).unwrap(), &params).unwrap();
        prop_assert!(j > 0.0 && j < 1.0);
    }

    #[test]
    fn symmetric_servers_are_exchangeable(theta in prop::collection::vec(-2.0f64..2.0, 4)) {
        let params = LbParams::new(10, 2.8, vec![1.0; 4]).unwrap();
        let base = lb_exact_objective(&PolicyParams::new(theta.clone()).unwrap(), &params).unwrap();
        let mut rotated = theta.clone();
        rotated.rotate_left(1);
        let mut swapped = theta;
        swapped.swap(0, 3);
        for perm in [rotated, swapped] {
            let j = lb_exact_objective(&PolicyParams::new(perm).unwrap(), &params).unwrap();
            prop_assert!((j - base).abs() < 1e-12);
        }
    }
}

#[test]
fn hundred_server_pools_use_log_domain() {
    let params = LbParams::pools(100, 4.0, 0.7).unwrap();
    let theta = PolicyParams::new((0..100).map(|i| (i / 25) as f64).collect()).unwrap();
    let g = buzen_normalizing_constants(&theta, &params).unwrap();
    let j = lb_exact_objective(&theta, &params).unwrap();
    assert!(j > 0.0 && j < 1.0, "{j}, log domain: {}", g.is_log_domain());
    let log = buzen_log_domain(&theta, &params).unwrap();
    assert!((g.log_normalizer() - log.log_normalizer()).abs() < 1e-9 * log.log_normalizer().abs().max(1.0));
}
