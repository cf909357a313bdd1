//! Prediction-error learning of the coefficient vector and the softmax
//! choice rule it drives.

use crate::basis::BasisSpec;
use crate::data::{Dataset, Session};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::scalar::{softplus, Scalar};

/// Coefficients, Q-values and choice probabilities along one session.
#[derive(Clone, Debug, PartialEq)]
pub struct QTrajectory<T> {
    /// δ¹ … δ^{T+1}.
    pub deltas: Vec<Vec<T>>,
    /// Q̃ᵗ(a, s_t) for every action, per trial.
    pub q_values: Vec<Vec<T>>,
    /// Softmax choice probabilities per trial.
    pub policy: Vec<Vec<T>>,
}

/// Features of one session, evaluated once: φ(a, s_t) for every action `a`.
#[derive(Clone, Debug)]
pub struct SessionDesign<T> {
    dim: usize,
    actions_per_trial: usize,
    features: Vec<T>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
}

impl<T: Scalar> SessionDesign<T> {
    pub fn new(spec: &BasisSpec, session: &Session) -> Result<Self> {
        let p = spec.dim();
        let d = spec.action_count();
        let n = session.horizon();
        let mut features = vec![T::zero(); n * d * p];
        for (t, tr) in session.trials.iter().enumerate() {
            for a in 0..d {
                let off = (t * d + a) * p;
                spec.evaluate_into(a, &tr.state, &mut features[off..off + p])?;
            }
            if tr.action >= d {
                return Err(Error::domain("action", format!("{} not in 0..{d}", tr.action)));
            }
        }
        Ok(SessionDesign {
            dim: p,
            actions_per_trial: d,
            features,
            actions: session.trials.iter().map(|t| t.action).collect(),
            rewards: session.trials.iter().map(|t| T::lit(t.reward)).collect(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    #[inline]
    pub fn phi(&self, t: usize, a: usize) -> &[T] {
        let off = (t * self.actions_per_trial + a) * self.dim;
        &self.features[off..off + self.dim]
    }

    /// Largest φᵀφ over the observed (action, state) pairs.
    pub fn max_observed_norm_sq(&self) -> T {
        (0..self.horizon())
            .map(|t| dot(self.phi(t, self.actions[t]), self.phi(t, self.actions[t])))
            .fold(T::zero(), T::max)
    }
}

pub fn build_designs<T: Scalar>(spec: &BasisSpec, data: &Dataset) -> Result<Vec<SessionDesign<T>>> {
    spec.check_compatible(data)?;
    data.sessions().iter().map(|s| SessionDesign::new(spec, s)).collect()
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Rejects learning rates for which some observed trial has an effective
/// rate β·φᵀφ outside (0, 1).
pub fn check_effective_rate<T: Scalar>(beta: T, max_norm_sq: T) -> Result<()> {
    let eff = beta * max_norm_sq;
    if !(eff > T::zero() && eff < T::one()) {
        return Err(Error::Config(format!(
            "effective learning rate β·max φᵀφ = {eff} must lie in (0,1); lower β or rescale the basis"
        )));
    }
    Ok(())
}

/// Largest admissible β for the given max φᵀφ, capped at 1.
pub fn beta_upper_bound(max_norm_sq: f64) -> f64 {
    if max_norm_sq > 1.0 {
        1.0 / max_norm_sq
    } else {
        1.0
    }
}

/// Softmax over `intercepts[a] + rho * q[a]` written into `out`.
pub fn softmax_into<T: Scalar>(intercepts: &[T], rho: T, q: &[T], out: &mut [T]) {
    let mut m = T::neg_infinity();
    for (o, (&nu, &qa)) in out.iter_mut().zip(intercepts.iter().zip(q)) {
        *o = nu + rho * qa;
        m = m.max(*o);
    }
    let mut z = T::zero();
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        z = z + *o;
    }
    for o in out.iter_mut() {
        *o = *o / z;
    }
}

/// Choice probabilities for one Q row under `params`.
pub fn action_probabilities<T: Scalar>(params: &ModelParams<T>, q_row: &[T]) -> Vec<T> {
    let nu = params.intercepts();
    let mut out = vec![T::zero(); q_row.len()];
    softmax_into(&nu, params.rho, q_row, &mut out);
    out
}

/// Runs the coefficient update over a session and records the trajectory.
pub fn propagate_coefficients<T: Scalar>(
    params: &ModelParams<T>,
    spec: &BasisSpec,
    session: &Session,
) -> Result<QTrajectory<T>> {
    let design = SessionDesign::new(spec, session)?;
    check_effective_rate(params.beta, design.max_observed_norm_sq())?;
    let d = spec.action_count();
    let nu = params.intercepts();
    let mut delta = params.initial_coefficients(spec);
    let mut traj = QTrajectory {
        deltas: Vec::with_capacity(design.horizon() + 1),
        q_values: Vec::with_capacity(design.horizon()),
        policy: Vec::with_capacity(design.horizon()),
    };
    traj.deltas.push(delta.clone());
    for t in 0..design.horizon() {
        let q: Vec<T> = (0..d).map(|a| dot(design.phi(t, a), &delta)).collect();
        let mut pol = vec![T::zero(); d];
        softmax_into(&nu, params.rho, &q, &mut pol);
        let a = design.actions[t];
        learn_step(&mut delta, design.phi(t, a), params.beta, design.rewards[t], q[a]);
        traj.q_values.push(q);
        traj.policy.push(pol);
        traj.deltas.push(delta.clone());
    }
    Ok(traj)
}

/// δ ← δ + β φ (r − prediction).
#[inline]
pub(crate) fn learn_step<T: Scalar>(delta: &mut [T], phi: &[T], beta: T, reward: T, prediction: T) {
    let step = beta * (reward - prediction);
    for (d, &f) in delta.iter_mut().zip(phi) {
        *d = *d + step * f;
    }
}

/// Log-probability of each observed action under the softmax rule, written
/// into `out` (length T). Allocation-free apart from two small scratch rows.
pub fn observed_log_probs<T: Scalar>(design: &SessionDesign<T>, params: &ModelParams<T>, init: &[T], out: &mut [T]) {
    let d = design.actions_per_trial;
    let nu = params.intercepts();
    let mut delta = init.to_vec();
    let mut logits = vec![T::zero(); d];
    for t in 0..design.horizon() {
        let a_obs = design.actions[t];
        let mut m = T::neg_infinity();
        let mut q_obs = T::zero();
        for a in 0..d {
            let q = dot(design.phi(t, a), &delta);
            if a == a_obs {
                q_obs = q;
            }
            logits[a] = nu[a] + params.rho * q;
            m = m.max(logits[a]);
        }
        out[t] = if d == 2 {
            -softplus(logits[1 - a_obs] - logits[a_obs])
        } else {
            logits[a_obs] - m - logits.iter().map(|&l| (l - m).exp()).sum::<T>().ln()
        };
        learn_step(&mut delta, design.phi(t, a_obs), params.beta, design.rewards[t], q_obs);
    }
}
