mod support {
    pub mod oracles;
}

use homi_core::design_space::validate_weights;
use homi_core::novelty::{lambda_ei, p_value};
use homi_core::users::typing::{accuracy_score, objective, speed_score};
use support::oracles;

#[test]
fn ei_matches_monte_carlo() {
    let worst = oracles::ei_vs_monte_carlo(100, 100_000, 1);
    assert!(worst <= 1e-2, "max |EI - MC| = {worst}");
}

#[test]
fn gp_matches_dense_algebra() {
    let (dm, ds) = oracles::gp_vs_dense(50, 2);
    assert!(dm <= 1e-6 && ds <= 1e-6, "mean {dm}, std {ds}");
}

#[test]
fn backprop_matches_central_differences() {
    for seed in 0..3 {
        let worst = oracles::nn_finite_difference(seed);
        assert!(worst <= 1e-3, "seed {seed}: relative error {worst}");
    }
}

#[test]
fn lambda_and_p_value_anchors() {
    assert_eq!(lambda_ei(0.0, 0.2), 1.0);
    assert_eq!(lambda_ei(0.2, 0.2), 0.0);
    assert_eq!(lambda_ei(0.7, 0.2), 0.0);
    assert!((lambda_ei(0.1, 0.2) - 0.5).abs() < 1e-15);
    let p = p_value(1.96, 0.0, 1.0).unwrap();
    assert!((p - 0.05).abs() <= 5e-4, "{p}");
}

#[test]
fn touch_model_matches_rectangle_integral() {
    let (mc, cf) = oracles::dgd_hit_rate(20, 100_000, 3);
    assert!(mc <= 0.01, "sampled hit rate off by {mc}");
    assert!(cf <= 1e-6, "closed form off by {cf}");
}

#[test]
fn typing_objective_anchors() {
    assert_eq!(speed_score(5.0), 0.0);
    assert_eq!(speed_score(22.0), 1.0);
    assert_eq!(accuracy_score(0.30), 0.0);
    let w = validate_weights(&[0.7, 0.3]).unwrap();
    assert_eq!(objective(13.5, 0.15, &w).unwrap(), 0.5);
}
