//! Oracles shared by the property suites and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rlhmm::banded::BandedMatrix;
use rlhmm::genlasso::primal_objective;
use rlhmm::params::ModelParams;
use rlhmm::rl::propagate_coefficients;
use rlhmm::{BasisSpec, Session, TrialRecord};

pub struct Enumerated {
    pub lik: f64,
    pub gamma: Vec<[f64; 2]>,
    pub xi: Vec<[[f64; 2]; 2]>,
}

/// Sums the joint over all 2^T hidden paths.
pub fn enumerate(em: &[[f64; 2]], pi1: f64, c01: &[f64], c11: &[f64]) -> Enumerated {
    let t_len = em.len();
    let trans = |t: usize, j: usize, k: usize| {
        let up = if j == 0 { c01[t] } else { c11[t] };
        if k == 1 {
            up
        } else {
            1.0 - up
        }
    };
    let mut lik = 0.0;
    let mut gamma = vec![[0.0; 2]; t_len];
    let mut xi = vec![[[0.0; 2]; 2]; t_len.saturating_sub(1)];
    for path in 0u32..(1 << t_len) {
        let u = |t: usize| ((path >> t) & 1) as usize;
        let mut p = if u(0) == 1 { pi1 } else { 1.0 - pi1 } * em[0][u(0)];
        for t in 1..t_len {
            p *= trans(t - 1, u(t - 1), u(t)) * em[t][u(t)];
        }
        lik += p;
        for t in 0..t_len {
            gamma[t][u(t)] += p;
        }
        for t in 0..t_len.saturating_sub(1) {
            xi[t][u(t)][u(t + 1)] += p;
        }
    }
    for g in &mut gamma {
        g[0] /= lik;
        g[1] /= lik;
    }
    for x in &mut xi {
        for row in x.iter_mut() {
            row[0] /= lik;
            row[1] /= lik;
        }
    }
    Enumerated { lik, gamma, xi }
}

pub fn dense(d: &BandedMatrix<f64>) -> DMatrix<f64> {
    let rows = d.to_dense();
    DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| rows[i][j])
}

/// Solves Dᵀu = (y − x)/λ by least squares (normal equations) and checks the subgradient
/// conditions. Returns the largest violation.
pub fn kkt_violation(y: &[f64], d: &BandedMatrix<f64>, lambda: f64, x: &[f64]) -> f64 {
    let dm = dense(d);
    let rhs = DVector::from_iterator(y.len(), y.iter().zip(x).map(|(a, b)| (a - b) / lambda));
    let dt = dm.transpose();
    let u = (&dm * &dt).cholesky().unwrap().solve(&(&dm * &rhs));
    let resid = (&dt * &u - &rhs).amax() * lambda;
    let dx = &dm * DVector::from_column_slice(x);
    let mut worst = resid;
    for k in 0..u.len() {
        worst = worst.max(u[k].abs() - 1.0);
        if dx[k].abs() > 1e-7 {
            worst = worst.max((u[k] - dx[k].signum()).abs());
        }
    }
    worst
}

/// Minimises the objective over every sign pattern of D x: each pattern
/// fixes the ℓ₁ term to a linear one and fused rows to equalities.
pub fn sign_pattern_oracle(y: &[f64], d: &BandedMatrix<f64>, lambda: f64) -> Vec<f64> {
    let dm = dense(d);
    let m = dm.nrows();
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let signs: Vec<i32> = (0..m).map(|k| (code / 3usize.pow(k as u32) % 3) as i32 - 1).collect();
        let mut g = DVector::zeros(n);
        let fused: Vec<usize> = (0..m).filter(|&k| signs[k] == 0).collect();
        for k in 0..m {
            if signs[k] != 0 {
                g += dm.row(k).transpose() * signs[k] as f64;
            }
        }
        let target = &yv - g * lambda;
        let x = if fused.is_empty() {
            target
        } else {
            let a = DMatrix::from_fn(fused.len(), n, |i, j| dm[(fused[i], j)]);
            let gram = &a * a.transpose();
            let mu = gram.lu().solve(&(&a * &target)).unwrap();
            &target - a.transpose() * mu
        };
        let xs: Vec<f64> = x.iter().copied().collect();
        let f = primal_objective(y, d, lambda, &xs);
        if best.as_ref().map_or(true, |(b, _)| f < *b) {
            best = Some((f, xs));
        }
    }
    best.unwrap().1
}

pub fn session(trials: &[(f64, usize, f64)]) -> Session {
    Session {
        subject_id: "x".into(),
        trials: trials
            .iter()
            .enumerate()
            .map(|(k, &(s, a, r))| TrialRecord {
                trial: k + 1,
                state: vec![s],
                action: a,
                reward: r,
            })
            .collect(),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest deviation from `phiᵀΔ_{t+1} = b·r_t + (1 − b)·phiᵀΔ_t` with
/// `b = β‖phi‖²` over one session.
pub fn weighted_sum_residual(spec: &BasisSpec, p: &ModelParams<f64>, sess: &Session) -> f64 {
    let traj = propagate_coefficients(p, spec, sess).unwrap();
    let mut worst = 0.0f64;
    for (t, tr) in sess.trials.iter().enumerate() {
        let phi: Vec<f64> = spec.evaluate(tr.action, &tr.state).unwrap();
        let rate = p.beta * dot(&phi, &phi);
        let before = dot(&phi, &traj.deltas[t]);
        let after = dot(&phi, &traj.deltas[t + 1]);
        worst = worst.max((after - (rate * tr.reward + (1.0 - rate) * before)).abs());
    }
    worst
}
