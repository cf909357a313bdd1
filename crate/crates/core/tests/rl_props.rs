//! Learner recursion and softmax identities.

mod common;

use common::{dot, session, weighted_sum_residual};
use proptest::prelude::*;
use rlhmm::params::ModelParams;
use rlhmm::rl::{action_probabilities, propagate_coefficients, softmax_into};
use rlhmm::{BasisSpec, Session};

fn params(beta: f64, rho: f64, nu: f64, alpha: f64, horizon: usize) -> ModelParams<f64> {
    ModelParams::engaged_only(beta, rho, vec![nu], alpha, horizon)
}

fn trials(categorical: bool) -> impl Strategy<Value = Vec<(f64, usize, f64)>> {
    let state = if categorical {
        (0usize..2).prop_map(|v| v as f64).boxed()
    } else {
        (0.0..=1.0f64).boxed()
    };
    prop::collection::vec((state, 0usize..2, prop::bool::ANY.prop_map(f64::from)), 1..60)
}

fn check_weighted_sum(spec: &BasisSpec, p: &ModelParams<f64>, sess: &Session) -> Result<(), TestCaseError> {
    prop_assert!(weighted_sum_residual(spec, p, sess) <= 1e-12);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn weighted_sum_linear(tr in trials(false), beta in 0.001..0.49f64, rho in 0.1..10.0f64, alpha in -3.0..3.0f64) {
        let sess = session(&tr);
        check_weighted_sum(&BasisSpec::unit_linear_two_action(), &params(beta, rho, 0.3, alpha, tr.len()), &sess)?;
    }

    #[test]
    fn weighted_sum_indicator(tr in trials(true), beta in 0.001..0.999f64, rho in 0.1..10.0f64, alpha in -3.0..3.0f64) {
        let sess = session(&tr);
        let p = ModelParams::engaged_only(beta, rho, vec![0.0], alpha, tr.len());
        check_weighted_sum(&BasisSpec::two_stimulus_indicator(), &p, &sess)?;
    }

    #[test]
    fn update_is_a_gradient_step(tr in trials(false), beta in 0.001..0.49f64, alpha in -3.0..3.0f64) {
        let spec = BasisSpec::unit_linear_two_action();
        let sess = session(&tr);
        let p = params(beta, 2.0, 0.0, alpha, tr.len());
        let traj = propagate_coefficients(&p, &spec, &sess).unwrap();
        for (t, rec) in sess.trials.iter().enumerate() {
            let phi: Vec<f64> = spec.evaluate(rec.action, &rec.state).unwrap();
            let loss = |d: &[f64]| (rec.reward - dot(&phi, d)).powi(2);
            let d0 = &traj.deltas[t];
            for k in 0..d0.len() {
                let h = 1e-5;
                let (mut up, mut dn) = (d0.clone(), d0.clone());
                up[k] += h;
                dn[k] -= h;
                let grad = (loss(&up) - loss(&dn)) / (2.0 * h);
                let step: f64 = traj.deltas[t + 1][k] - d0[k];
                let expect: f64 = -beta / 2.0 * grad;
                prop_assert!((step - expect).abs() <= 1e-6 * expect.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn policy_rows_sum_to_one(tr in trials(false), beta in 0.001..0.49f64, rho in 0.01..200.0f64, nu in -5.0..5.0f64) {
        let sess = session(&tr);
        let traj = propagate_coefficients(&params(beta, rho, nu, 2.0, tr.len()), &BasisSpec::unit_linear_two_action(), &sess).unwrap();
        for row in &traj.policy {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_sums_and_shifts(q in prop::collection::vec(-5.0..5.0f64, 2..6), rho in 0.01..200.0f64, c in -50.0..50.0f64) {
        let nu: Vec<f64> = (0..q.len()).map(|k| 0.1 * k as f64).collect();
        let mut p = vec![0.0; q.len()];
        softmax_into(&nu, rho, &q, &mut p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|v| v.is_finite()));
        let shifted: Vec<f64> = q.iter().map(|v| v + c).collect();
        let mut ps = vec![0.0; q.len()];
        softmax_into(&nu, rho, &shifted, &mut ps);
        for (a, b) in p.iter().zip(&ps) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn raising_q_raises_its_probability(q in prop::collection::vec(-2.0..2.0f64, 2..5), a in 0usize..5, bump in 0.01..1.0f64) {
        let a = a % q.len();
        let nu = vec![0.0; q.len()];
        let mut before = vec![0.0; q.len()];
        softmax_into(&nu, 3.0, &q, &mut before);
        let mut q2 = q.clone();
        q2[a] += bump;
        let mut after = vec![0.0; q.len()];
        softmax_into(&nu, 3.0, &q2, &mut after);
        prop_assert!(after[a] > before[a]);
    }

    #[test]
    fn single_precision_rows_sum_to_one(q in prop::collection::vec(-5.0..5.0f32, 2..6), rho in 0.01..100.0f32) {
        let nu = vec![0.0f32; q.len()];
        let mut p = vec![0.0f32; q.len()];
        softmax_into(&nu, rho, &q, &mut p);
        prop_assert!((p.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn softmax_reference_values() {
    let p = params(0.05, 4.0, 0.0, 2.0, 1);
    let probs = action_probabilities(&p, &[0.0, 0.5]);
    let e2 = 2f64.exp();
    assert!((probs[0] - 1.0 / (1.0 + e2)).abs() < 1e-15);
    assert!((probs[1] - e2 / (1.0 + e2)).abs() < 1e-15);
    assert!((probs[0] - 0.1192).abs() < 1e-4);
    let extreme = action_probabilities(&params(0.05, 1e3, 0.0, 2.0, 1), &[0.0, 1.0]);
    assert!(extreme.iter().all(|v| v.is_finite()) && (extreme[1] - 1.0).abs() < 1e-15);
}

#[test]
fn effective_rate_example() {
    let spec = BasisSpec::unit_linear_two_action();
    let phi: Vec<f64> = spec.evaluate(1, &[0.5]).unwrap();
    assert!((0.05 * dot(&phi, &phi) - 0.0625).abs() < 1e-15);
}

#[test]
fn indicator_update_example() {
    let spec = BasisSpec::two_stimulus_indicator();
    // α pattern (1,0,0,1) with α/ρ = 0.5 puts Q(1,1) at 0.5.
    let p: ModelParams<f64> = ModelParams::engaged_only(0.05, 4.0, vec![0.0], 2.0, 1);
    let traj = propagate_coefficients(&p, &spec, &session(&[(1.0, 1, 1.0)])).unwrap();
    assert!((traj.q_values[0][1] - 0.5).abs() < 1e-15);
    let phi: Vec<f64> = spec.evaluate(1, &[1.0]).unwrap();
    assert!((dot(&phi, &traj.deltas[1]) - 0.525).abs() < 1e-15);
}
