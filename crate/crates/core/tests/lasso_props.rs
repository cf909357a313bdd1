//! Generalized lasso: KKT certificates, a sign-pattern oracle and path checks.

mod common;

use common::{kkt_violation, sign_pattern_oracle};
use proptest::prelude::*;
use rlhmm::banded::BandedMatrix;
use rlhmm::genlasso::{
    build_difference_operator, primal_objective, project_null_space, solve_generalized_lasso,
    solve_generalized_lasso_with, AdmmOptions,
};

#[test]
fn hand_example_matches_oracle() {
    let d = build_difference_operator::<f64>(0, 3).unwrap();
    let y = [0.0, 4.0, 0.0];
    let x = solve_generalized_lasso(&y, &d, 1.0).unwrap();
    let oracle = sign_pattern_oracle(&y, &d, 1.0);
    for (a, b) in x.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-6, "{x:?} vs {oracle:?}");
    }
    assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 2.0).abs() < 1e-6 && (x[2] - 1.0).abs() < 1e-6);
}

#[test]
fn infinite_lambda_projects_onto_constants() {
    let d = build_difference_operator::<f64>(0, 2).unwrap();
    let x = solve_generalized_lasso(&[1.0, 3.0], &d, f64::INFINITY).unwrap();
    assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
}

#[test]
fn orthonormal_row_soft_thresholds() {
    let s = 0.5f64.sqrt();
    let d = BandedMatrix::from_rows(2, 2, vec![0], vec![-s, s]).unwrap();
    for (y, lambda) in [
        ([0.3, 2.9], 1e-3),
        ([0.3, 2.9], 0.5),
        ([0.3, 2.9], 50.0),
        ([-1.0, 4.0], 1e3),
    ] {
        let x = solve_generalized_lasso(&y, &d, lambda).unwrap();
        let dy = s * (y[1] - y[0]);
        let soft = dy.signum() * (dy.abs() - lambda).max(0.0);
        let shift = dy - soft;
        let expect = [y[0] + s * shift, y[1] - s * shift];
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() <= 1e-8, "λ={lambda}: {x:?} vs {expect:?}");
        }
    }
}

fn weighted_operator(order: usize, weights: &[f64]) -> BandedMatrix<f64> {
    build_difference_operator::<f64>(order, weights.len())
        .unwrap()
        .scale_columns(weights)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kkt_holds(
        order in 0usize..2,
        ys in prop::collection::vec(-5.0..5.0f64, 4..30),
        ws in prop::collection::vec(0.2..3.0f64, 30),
        lambda in 0.01..5.0f64,
    ) {
        let d = weighted_operator(order, &ws[..ys.len()]);
        let sol = solve_generalized_lasso_with(&ys, &d, lambda, &AdmmOptions::default()).unwrap();
        prop_assert!(kkt_violation(&ys, &d, lambda, &sol.x) <= 1e-6);
        let yy: f64 = ys.iter().map(|v| v * v).sum();
        prop_assert!(sol.gap <= 1e-8 * (1.0 + yy));
    }

    #[test]
    fn length_three_matches_sign_patterns(
        order in 0usize..2,
        ys in prop::collection::vec(-4.0..4.0f64, 3),
        ws in prop::collection::vec(0.3..2.0f64, 3),
        lambda in 0.01..4.0f64,
    ) {
        let d = weighted_operator(order, &ws);
        let x = solve_generalized_lasso(&ys, &d, lambda).unwrap();
        let oracle = sign_pattern_oracle(&ys, &d, lambda);
        for (a, b) in x.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-6, "{:?} vs {:?}", x, oracle);
        }
    }

    #[test]
    fn penalty_shrinks_along_the_path(
        ys in prop::collection::vec(-5.0..5.0f64, 5..25),
        l1 in 0.0..3.0f64,
        dl in 0.0..3.0f64,
    ) {
        let d = build_difference_operator::<f64>(0, ys.len()).unwrap();
        let tv = |x: &[f64]| d.mul_vec(x).iter().map(|v| v.abs()).sum::<f64>();
        let a = solve_generalized_lasso(&ys, &d, l1).unwrap();
        let b = solve_generalized_lasso(&ys, &d, l1 + dl).unwrap();
        prop_assert!(tv(&b) <= tv(&a) + 1e-6);
    }

    #[test]
    fn beats_trivial_feasible_points(
        ys in prop::collection::vec(-5.0..5.0f64, 3..25),
        lambda in 0.0..5.0f64,
    ) {
        let d = build_difference_operator::<f64>(1, ys.len()).unwrap();
        let x = solve_generalized_lasso(&ys, &d, lambda).unwrap();
        let f = primal_objective(&ys, &d, lambda, &x);
        let proj = project_null_space(&ys, &d).unwrap();
        prop_assert!(f <= primal_objective(&ys, &d, lambda, &ys) + 1e-9);
        prop_assert!(f <= primal_objective(&ys, &d, lambda, &proj) + 1e-9);
    }
}
