//! Stationary score identity and detailed balance on small chains.

use proptest::prelude::*;
use sage_core::environments::ising::ising_descriptor;
use sage_core::environments::load_balancing::lb_descriptor;
use sage_core::environments::mm1::mm1_descriptor;
use sage_core::exact_eval::{
    ising_detailed_balance_error, ising_glauber_chain, lb_uniformized_chain, mm1_embedded_chain, verify_score_identity,
};
use sage_core::{IsingParams, LbParams, Mm1Params, PolicyParams};

const H: f64 = 1e-5;

fn mm1_error(k: usize, lambda: f64, theta: Vec<f64>) -> f64 {
    let params = Mm1Params::new(lambda, 1.0, 5.0, 1.0, k).unwrap();
    verify_score_identity(
        &mm1_descriptor(&params),
        &PolicyParams::new(theta).unwrap(),
        |t| mm1_embedded_chain(t, &params, 60),
        H,
    )
    .unwrap()
}

#[test]
fn mm1_identity() {
    for k in 0..=2 {
        let err = mm1_error(k, 0.5, vec![0.0; k + 1]);
        assert!(err < 1e-5, "k={k}: {err}");
    }
}

#[test]
fn load_balancing_identity() {
    let params = LbParams::new(3, 1.0, vec![1.0, 1.0]).unwrap();
    let theta = PolicyParams::new(vec![0.3, -0.2]).unwrap();
    let err = verify_score_identity(&lb_descriptor(&params), &theta, |t| lb_uniformized_chain(t, &params), H).unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn ising_identity() {
    let params = IsingParams::new(2, 2, 1.0, 1.0, -1.0, 1.0).unwrap();
    let theta = PolicyParams::new(vec![0.1, 0.2, -0.1]).unwrap();
    let err = verify_score_identity(
        &ising_descriptor(&params),
        &theta,
        |t| ising_glauber_chain(t, &params),
        H,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mm1_identity_random_theta(theta in prop::collection::vec(-2.0f64..2.0, 3)) {
        prop_assert!(mm1_error(2, 0.5, theta) < 1e-5);
    }

    #[test]
    fn lb_identity_random(theta in prop::collection::vec(-1.5f64..1.5, 3), mu in prop::collection::vec(0.5f64..2.0, 3)) {
        let params = LbParams::new(2, 1.3, mu).unwrap();
        let err = verify_score_identity(
            &lb_descriptor(&params),
            &PolicyParams::new(theta).unwrap(),
            |t| lb_uniformized_chain(t, &params),
            H,
        ).unwrap();
        prop_assert!(err < 1e-5);
    }

    #[test]
    fn ising_detailed_balance(theta in prop::collection::vec(-2.0f64..2.0, 3), coupling in -1.0f64..1.5) {
        let params = IsingParams::new(2, 2, coupling, 1.0, -1.0, 1.0).unwrap();
        prop_assert!(ising_detailed_balance_error(&PolicyParams::new(theta).unwrap(), &params).unwrap() < 1e-10);
    }
}
