//! Penalized generalized EM for the RL-HMM.
//!
//! Each sweep runs the E-step (forward–backward per subject), then updates
//! π₁ in closed form, each transition curve by one safeguarded
//! Newton-plus-generalized-lasso step, and the learner parameters by a few
//! projected quasi-Newton iterations. Every block only has to decrease its
//! part of the penalized expected complete-data objective, which is enough
//! for the penalized observed log-likelihood to be non-decreasing.

use crate::banded::BandedMatrix;
use crate::basis::BasisSpec;
use crate::boxopt::{minimize_with, BoxSpec, LbfgsMemory, LbfgsOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::genlasso::{project_null_space, solve_generalized_lasso_hinted, AdmmOptions, PenaltySpec};
use crate::hmm::{emissions_from_design, forward_backward, PosteriorEntry, PosteriorSet, TransitionCurve};
use crate::params::ModelParams;
use crate::rl::{beta_upper_bound, build_designs, check_effective_rate, observed_log_probs, SessionDesign};
use crate::scalar::{logistic, logit, softplus, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const PROB_CLAMP: f64 = 1e-6;
pub const BETA_MIN: f64 = 1e-6;
pub const RHO_MIN: f64 = 1e-6;
pub const HESSIAN_FLOOR: f64 = 1e-12;
pub const MONOTONE_SLACK: f64 = 1e-8;
const MAX_HALVINGS: usize = 20;

/// Which likelihood is fitted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Engaged/lapse mixture with time-varying transitions.
    #[default]
    Hmm,
    /// Softmax learner alone (every trial engaged).
    RlOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSpec {
    pub beta: f64,
    pub rho: f64,
    pub alpha_scalar: f64,
    pub pi1: f64,
    /// Initial constant P(engaged next | lapse).
    pub c01: f64,
    /// Initial constant P(engaged next | engaged).
    pub c11: f64,
    /// Number of EM starts; start 0 is the unjittered point.
    pub starts: usize,
    /// Half-width of the uniform jitter on unconstrained scales.
    pub jitter: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec {
            beta: 0.1,
            rho: 1.0,
            alpha_scalar: 0.5,
            pi1: 0.7,
            c01: 0.1,
            c11: 0.9,
            starts: 3,
            jitter: 0.5,
        }
    }
}

/// Parameters held at their initial values during EM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pins {
    pub nu: bool,
    pub alpha: bool,
    pub pi1: bool,
    /// Both transition curves.
    pub transitions: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub model: ModelKind,
    pub penalty: PenaltySpec,
    pub max_em_iters: usize,
    /// Relative change of the penalized observed log-likelihood.
    pub em_tolerance: f64,
    pub rl_step_iters: usize,
    pub zeta_step_count: usize,
    pub init: InitSpec,
    pub pins: Pins,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            model: ModelKind::Hmm,
            penalty: PenaltySpec::fused(1.0, 1.0),
            max_em_iters: 500,
            em_tolerance: 1e-7,
            rl_step_iters: 1,
            zeta_step_count: 1,
            init: InitSpec::default(),
            pins: Pins::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn rl_only() -> Self {
        FitConfig {
            model: ModelKind::RlOnly,
            penalty: PenaltySpec::fused(0.0, 0.0),
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        if self.max_em_iters == 0 || self.rl_step_iters == 0 || self.zeta_step_count == 0 {
            return Err(Error::Config("iteration counts must be positive".into()));
        }
        if !(self.em_tolerance > 0.0) {
            return Err(Error::Config("em_tolerance must be > 0".into()));
        }
        let i = &self.init;
        if i.starts == 0 {
            return Err(Error::Config("init.starts must be ≥ 1".into()));
        }
        if !(i.beta > 0.0 && i.beta < 1.0) || !(i.rho > 0.0 && i.rho.is_finite()) || !i.alpha_scalar.is_finite() {
            return Err(Error::Config("init learner parameters out of range".into()));
        }
        for (name, p) in [("pi1", i.pi1), ("c01", i.c01), ("c11", i.c11)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("init.{name} must lie in (0,1)")));
            }
        }
        if !(i.jitter >= 0.0 && i.jitter.is_finite()) {
            return Err(Error::Config("init.jitter must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// One EM sweep's bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    /// Penalized negative expected complete-data log-likelihood at the
    /// sweep's starting point.
    pub neg_expected_complete: f64,
    pub penalized_log_lik: f64,
    pub flags: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub params: ModelParams<T>,
    pub posteriors: PosteriorSet<T>,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub iterations: usize,
    pub log_lik: T,
    pub penalized_log_lik: T,
    pub warnings: Vec<String>,
    pub config: FitConfig,
    /// Index of the winning start.
    pub start: usize,
    pub elapsed_secs: f64,
}

/// Forward–backward for every subject at `params`.
pub fn e_step<T: Scalar>(params: &ModelParams<T>, spec: &BasisSpec, data: &Dataset) -> Result<PosteriorSet<T>> {
    params.validate(spec, data.horizon())?;
    let designs = build_designs(spec, data)?;
    check_rates(params.beta, &designs)?;
    e_step_designs(params, spec, &designs)
}

/// Per-subject observed log-likelihoods by the forward pass alone.
pub fn observed_log_likelihoods<T: Scalar>(
    params: &ModelParams<T>,
    spec: &BasisSpec,
    data: &Dataset,
) -> Result<Vec<T>> {
    params.validate(spec, data.horizon())?;
    let designs = build_designs(spec, data)?;
    check_rates(params.beta, &designs)?;
    let init = params.initial_coefficients(spec);
    let curve = TransitionCurve::from_params(params);
    let d = spec.action_count();
    designs
        .par_iter()
        .map(|design| {
            let mut em = vec![[T::zero(); 2]; design.horizon()];
            emissions_from_design(design, params, &init, d, &mut em);
            crate::hmm::forward_log_likelihood(&em, params.pi1, &curve)
        })
        .collect()
}

fn check_rates<T: Scalar>(beta: T, designs: &[SessionDesign<T>]) -> Result<()> {
    let max = designs.iter().map(|d| d.max_observed_norm_sq()).fold(T::zero(), T::max);
    check_effective_rate(beta, max)
}

fn e_step_designs<T: Scalar>(
    params: &ModelParams<T>,
    spec: &BasisSpec,
    designs: &[SessionDesign<T>],
) -> Result<PosteriorSet<T>> {
    Ok(e_step_full(params, spec, designs)?.0)
}

/// Posteriors plus the negative expected complete-data log-likelihood
/// Q(θ | θ) they imply.
fn e_step_full<T: Scalar>(
    params: &ModelParams<T>,
    spec: &BasisSpec,
    designs: &[SessionDesign<T>],
) -> Result<(PosteriorSet<T>, T)> {
    let init = params.initial_coefficients(spec);
    let curve = TransitionCurve::from_params(params);
    let d = spec.action_count();
    let parts = designs
        .par_iter()
        .map(|design| {
            let mut em = vec![[T::zero(); 2]; design.horizon()];
            emissions_from_design(design, params, &init, d, &mut em);
            let e = forward_backward(&em, params.pi1, &curve)?;
            let q = expected_complete(&e, &em, params.pi1, &curve);
            Ok((e, q))
        })
        .collect::<Result<Vec<(PosteriorEntry<T>, T)>>>()?;
    let mut q = T::zero();
    let mut entries = Vec::with_capacity(parts.len());
    for (e, v) in parts {
        q = q - v;
        entries.push(e);
    }
    Ok((PosteriorSet { entries }, q))
}

fn expected_complete<T: Scalar>(e: &PosteriorEntry<T>, em: &[[T; 2]], pi1: T, curve: &TransitionCurve<T>) -> T {
    let mut q = xlogy(e.gamma[0][0], T::one() - pi1) + xlogy(e.gamma[0][1], pi1);
    for (t, x) in e.xi.iter().enumerate() {
        let a = curve.matrix(t);
        for j in 0..2 {
            for k in 0..2 {
                q = q + xlogy(x[j][k], a[j][k]);
            }
        }
    }
    for (g, p) in e.gamma.iter().zip(em) {
        q = q + xlogy(g[0], p[0]) + xlogy(g[1], p[1]);
    }
    q
}

/// Mean engaged posterior at the first trial, clamped away from 0 and 1.
pub fn m_step_pi<T: Scalar>(posteriors: &PosteriorSet<T>) -> T {
    let n = posteriors.entries.len();
    if n == 0 {
        return T::lit(0.5);
    }
    let mean = posteriors.entries.iter().map(|e| e.gamma[0][1]).sum::<T>() / T::lit(n as f64);
    mean.max(T::lit(PROB_CLAMP)).min(T::lit(1.0 - PROB_CLAMP))
}

/// Expected transition counts out of state `j`: (into engaged, total).
pub fn transition_counts<T: Scalar>(posteriors: &PosteriorSet<T>, j: usize) -> (Vec<T>, Vec<T>) {
    let m = posteriors.entries.first().map_or(0, |e| e.xi.len());
    let mut into = vec![T::zero(); m];
    let mut total = vec![T::zero(); m];
    for e in &posteriors.entries {
        for (t, x) in e.xi.iter().enumerate() {
            into[t] = into[t] + x[j][1];
            total[t] = total[t] + x[j][0] + x[j][1];
        }
    }
    (into, total)
}

/// Outcome of one transition-curve update.
#[derive(Clone, Debug, PartialEq)]
pub struct ZetaUpdate<T> {
    pub zeta: Vec<T>,
    /// Number of times the Newton step was halved before acceptance.
    pub halvings: usize,
    /// False when every damped step failed and `zeta` is the input curve.
    pub accepted: bool,
    pub ridge_lifted: bool,
    /// No expected transitions out of the state; nothing to update.
    pub skipped: bool,
    pub solver_warning: Option<String>,
}

/// The transition-curve M-objective
/// Σₜ [−N¹ₜ ζₜ + Nₜ log(1 + e^{ζₜ})] + λ‖D ζ‖₁ (penalty dropped at λ ∈ {0, ∞}).
pub fn zeta_objective<T: Scalar>(into: &[T], total: &[T], zeta: &[T], lambda: f64, d: Option<&BandedMatrix<T>>) -> T {
    let nll = zeta
        .iter()
        .zip(into.iter().zip(total))
        .map(|(&z, (&n1, &n))| -n1 * z + n * softplus(z))
        .sum::<T>();
    nll + penalty_value(zeta, lambda, d)
}

fn penalty_value<T: Scalar>(zeta: &[T], lambda: f64, d: Option<&BandedMatrix<T>>) -> T {
    match d {
        Some(d) if lambda > 0.0 && lambda.is_finite() => {
            T::lit(lambda) * d.mul_vec(zeta).iter().map(|v| v.abs()).sum::<T>()
        }
        _ => T::zero(),
    }
}

/// Penalty operator for a curve of length `m`, or `None` when the curve is
/// too short to have any differences of the requested order.
fn penalty_operator<T: Scalar>(order: usize, m: usize) -> Result<Option<BandedMatrix<T>>> {
    if m < order + 2 {
        return Ok(None);
    }
    Ok(Some(crate::genlasso::build_difference_operator(order, m)?))
}

/// One safeguarded Newton-plus-generalized-lasso update of ζ_j.
pub fn m_step_zeta<T: Scalar>(
    posteriors: &PosteriorSet<T>,
    zeta_current: &[T],
    j: usize,
    penalty: &PenaltySpec,
) -> Result<ZetaUpdate<T>> {
    let (into, total) = transition_counts(posteriors, j);
    if into.len() != zeta_current.len() {
        return Err(Error::Dimension(format!(
            "curve has length {}, posteriors imply {}",
            zeta_current.len(),
            into.len()
        )));
    }
    let d = penalty_operator(penalty.order, zeta_current.len())?;
    zeta_update(
        &into,
        &total,
        zeta_current,
        penalty.lambda(j),
        d.as_ref(),
        &AdmmOptions::default(),
        &mut None,
    )
}

fn zeta_update<T: Scalar>(
    into: &[T],
    total: &[T],
    zeta: &[T],
    lambda: f64,
    d: Option<&BandedMatrix<T>>,
    admm: &AdmmOptions,
    hint: &mut Option<Vec<i8>>,
) -> Result<ZetaUpdate<T>> {
    let unchanged = |skipped: bool, warn: Option<String>| ZetaUpdate {
        zeta: zeta.to_vec(),
        halvings: 0,
        accepted: !skipped,
        ridge_lifted: false,
        skipped,
        solver_warning: warn,
    };
    if zeta.iter().any(|z| !z.is_finite()) {
        return Err(Error::domain("zeta", "transition curve must be finite"));
    }
    if total.iter().copied().sum::<T>() <= T::zero() {
        return Ok(unchanged(true, None));
    }
    let floor = T::lit(HESSIAN_FLOOR);
    let mut ridge_lifted = false;
    let mut grad = Vec::with_capacity(zeta.len());
    let mut root_h = Vec::with_capacity(zeta.len());
    for ((&z, &n1), &n) in zeta.iter().zip(into).zip(total) {
        let c = logistic(z);
        grad.push(-n1 + n * c);
        let mut h = n * c * (T::one() - c);
        if h < floor {
            h = floor;
            ridge_lifted = true;
        }
        root_h.push(h.sqrt());
    }
    let inv_root: Vec<T> = root_h.iter().map(|&r| T::one() / r).collect();
    let scaled = match d {
        Some(d) if lambda > 0.0 => Some(d.scale_columns(&inv_root)),
        _ => None,
    };
    let j0 = zeta_objective(into, total, zeta, lambda, d);
    let mut step = T::one();
    let mut warning = None;
    for halvings in 0..=MAX_HALVINGS {
        let y: Vec<T> = zeta
            .iter()
            .zip(&grad)
            .zip(&root_h)
            .map(|((&z, &g), &r)| r * z - step * g / r)
            .collect();
        let x = match &scaled {
            None => Ok(y),
            Some(dt) if lambda.is_infinite() => project_null_space(&y, dt),
            Some(dt) => solve_generalized_lasso_hinted(&y, dt, T::lit(lambda), admm, hint.as_deref()).map(|s| {
                *hint = Some(s.pattern);
                s.x
            }),
        };
        let x = match x {
            Ok(x) => x,
            Err(e) => {
                warning = Some(e.to_string());
                break;
            }
        };
        let cand: Vec<T> = x.iter().zip(&inv_root).map(|(&v, &s)| v * s).collect();
        if cand.iter().all(|v| v.is_finite()) && zeta_objective(into, total, &cand, lambda, d) <= j0 {
            return Ok(ZetaUpdate {
                zeta: cand,
                halvings,
                accepted: true,
                ridge_lifted,
                skipped: false,
                solver_warning: None,
            });
        }
        step = step * T::lit(0.5);
    }
    let mut out = unchanged(false, warning);
    out.ridge_lifted = ridge_lifted;
    Ok(out)
}

/// Layout of the learner block inside the optimizer's vector:
/// β, ρ, the free intercepts, then α unless pinned.
#[derive(Clone, Debug)]
struct RlLayout {
    nu_slots: Vec<usize>,
    alpha: bool,
}

impl RlLayout {
    fn new(spec: &BasisSpec, pins: &Pins) -> Self {
        let nu_slots = if pins.nu {
            Vec::new()
        } else {
            spec.nu_free()
                .iter()
                .enumerate()
                .filter(|(_, &f)| f)
                .map(|(k, _)| k)
                .collect()
        };
        RlLayout {
            nu_slots,
            alpha: !pins.alpha,
        }
    }

    fn dim(&self) -> usize {
        2 + self.nu_slots.len() + usize::from(self.alpha)
    }

    fn pack<T: Scalar>(&self, p: &ModelParams<T>) -> Vec<T> {
        let mut x = vec![p.beta, p.rho];
        x.extend(self.nu_slots.iter().map(|&k| p.nu[k]));
        if self.alpha {
            x.push(p.alpha_scalar);
        }
        x
    }

    fn unpack<T: Scalar>(&self, x: &[T], p: &mut ModelParams<T>) {
        p.beta = x[0];
        p.rho = x[1];
        for (i, &k) in self.nu_slots.iter().enumerate() {
            p.nu[k] = x[2 + i];
        }
        if self.alpha {
            p.alpha_scalar = x[2 + self.nu_slots.len()];
        }
    }

    fn bounds(&self, beta_max: f64) -> BoxSpec {
        let mut lo = vec![BETA_MIN, RHO_MIN];
        let mut hi = vec![beta_max, f64::INFINITY];
        for _ in 0..self.dim() - 2 {
            lo.push(f64::NEG_INFINITY);
            hi.push(f64::INFINITY);
        }
        BoxSpec { lower: lo, upper: hi }
    }
}

/// Largest β in the box: below 1 − 1e−6 and below 1/max φᵀφ.
/// Upper bound for β, taken over the whole state space so that a fit stays
/// valid on sessions it was not trained on.
fn beta_max<T: Scalar>(spec: &BasisSpec, designs: &[SessionDesign<T>]) -> f64 {
    let observed = designs
        .iter()
        .map(|d| d.max_observed_norm_sq())
        .fold(T::zero(), T::max)
        .to_f64_lossy();
    (1.0 - PROB_CLAMP) * beta_upper_bound(observed.max(spec.sup_norm_sq()))
}

/// γ-weighted negative log-softmax of the observed actions, summed over
/// subjects in index order.
pub fn rl_objective<T: Scalar>(
    params: &ModelParams<T>,
    spec: &BasisSpec,
    designs: &[SessionDesign<T>],
    weights: &[Vec<T>],
) -> T {
    let init = params.initial_coefficients(spec);
    let parts: Vec<T> = designs
        .par_iter()
        .zip(weights)
        .map(|(design, w)| {
            let mut lp = vec![T::zero(); design.horizon()];
            observed_log_probs(design, params, &init, &mut lp);
            lp.iter().zip(w).fold(
                T::zero(),
                |acc, (&l, &g)| if g == T::zero() { acc } else { acc - g * l },
            )
        })
        .collect();
    parts.into_iter().fold(T::zero(), |a, b| a + b)
}

/// Runs up to `iters` box-constrained quasi-Newton iterations on the learner
/// block with the engaged posteriors held fixed.
pub fn m_step_rl<T: Scalar>(
    posteriors: &PosteriorSet<T>,
    params: &ModelParams<T>,
    spec: &BasisSpec,
    data: &Dataset,
    iters: usize,
) -> Result<ModelParams<T>> {
    let designs = build_designs(spec, data)?;
    let layout = RlLayout::new(spec, &Pins::default());
    let mut memory = LbfgsMemory::new();
    Ok(rl_block(posteriors, params, spec, &designs, &layout, iters, &mut memory)?.0)
}

fn rl_block<T: Scalar>(
    posteriors: &PosteriorSet<T>,
    params: &ModelParams<T>,
    spec: &BasisSpec,
    designs: &[SessionDesign<T>],
    layout: &RlLayout,
    iters: usize,
    memory: &mut LbfgsMemory<T>,
) -> Result<(ModelParams<T>, bool)> {
    let weights = posteriors.engaged_rows();
    if weights.iter().flatten().all(|&g| g == T::zero()) {
        return Ok((params.clone(), true));
    }
    let bounds = layout.bounds(beta_max(spec, designs));
    let mut x0 = layout.pack(params);
    bounds.project(&mut x0);
    let mut trial = params.clone();
    let opts = LbfgsOptions {
        max_iters: iters,
        ..LbfgsOptions::default()
    };
    let out = minimize_with(
        |x: &[T]| {
            layout.unpack(x, &mut trial);
            rl_objective(&trial, spec, designs, &weights)
        },
        &x0,
        &bounds,
        &opts,
        memory,
    )?;
    let mut next = params.clone();
    layout.unpack(&out.x, &mut next);
    Ok((next, false))
}

/// Sum of both curves' penalties.
fn total_penalty<T: Scalar>(params: &ModelParams<T>, penalty: &PenaltySpec, d: Option<&BandedMatrix<T>>) -> T {
    if params.is_engaged_only() {
        return T::zero();
    }
    penalty_value(&params.zeta0, penalty.lambda0, d) + penalty_value(&params.zeta1, penalty.lambda1, d)
}

#[inline]
fn xlogy<T: Scalar>(x: T, y: T) -> T {
    if x == T::zero() {
        T::zero()
    } else {
        x * y.ln()
    }
}

fn starting_point<T: Scalar>(
    config: &FitConfig,
    spec: &BasisSpec,
    horizon: usize,
    beta_cap: f64,
    start: usize,
) -> ModelParams<T> {
    let i = &config.init;
    let mut beta = i.beta;
    let mut rho = i.rho;
    let mut alpha = i.alpha_scalar;
    let mut pi1 = i.pi1;
    let mut z0 = logit(i.c01);
    let mut z1 = logit(i.c11);
    if start > 0 && i.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(start as u64);
        let mut u = || rng.gen_range(-1.0..=1.0) * i.jitter;
        beta *= u().exp();
        rho *= u().exp();
        let da = u();
        let dp = u();
        let d0 = u();
        let d1 = u();
        if !config.pins.alpha {
            alpha += da;
        }
        if !config.pins.pi1 {
            pi1 = logistic(logit(pi1) + dp);
        }
        if !config.pins.transitions {
            z0 += d0;
            z1 += d1;
        }
    }
    beta = beta.clamp(BETA_MIN, beta_cap);
    let nu = vec![T::zero(); spec.action_count() - 1];
    match config.model {
        ModelKind::Hmm => ModelParams::with_constant_transitions(
            T::lit(beta),
            T::lit(rho),
            nu,
            T::lit(alpha),
            T::lit(pi1),
            T::lit(z0),
            T::lit(z1),
            horizon,
        ),
        ModelKind::RlOnly => ModelParams::engaged_only(T::lit(beta), T::lit(rho), nu, T::lit(alpha), horizon),
    }
}

/// Fits the model from the configured starting points and keeps the start
/// with the highest penalized log-likelihood.
pub fn fit<T: Scalar>(data: &Dataset, spec: &BasisSpec, config: &FitConfig) -> Result<FitResult<T>> {
    config.validate()?;
    let clock = Instant::now();
    let designs = build_designs::<T>(spec, data)?;
    let cap = beta_max(spec, &designs);
    let mut best: Option<FitResult<T>> = None;
    let mut first_err = None;
    for start in 0..config.init.starts {
        let p0 = starting_point(config, spec, data.horizon(), cap, start);
        match run_em(spec, &designs, config, p0) {
            Ok(mut r) => {
                r.start = start;
                let better = best
                    .as_ref()
                    .map_or(true, |b| r.penalized_log_lik > b.penalized_log_lik);
                if better {
                    best = Some(r);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(mut r) => {
            r.elapsed_secs = clock.elapsed().as_secs_f64();
            Ok(r)
        }
        None => Err(first_err.expect("at least one start ran")),
    }
}

/// Single EM run from `start` (warm start).
pub fn fit_from<T: Scalar>(
    data: &Dataset,
    spec: &BasisSpec,
    config: &FitConfig,
    start: &ModelParams<T>,
) -> Result<FitResult<T>> {
    config.validate()?;
    let clock = Instant::now();
    let designs = build_designs::<T>(spec, data)?;
    let mut p0 = start.clone();
    if p0.horizon() != data.horizon() {
        return Err(Error::Dimension(format!(
            "start parameters have horizon {}, data {}",
            p0.horizon(),
            data.horizon()
        )));
    }
    if config.model == ModelKind::RlOnly && !p0.is_engaged_only() {
        p0 = ModelParams::engaged_only(p0.beta, p0.rho, p0.nu, p0.alpha_scalar, data.horizon());
    }
    let mut r = run_em(spec, &designs, config, p0)?;
    r.elapsed_secs = clock.elapsed().as_secs_f64();
    Ok(r)
}

fn run_em<T: Scalar>(
    spec: &BasisSpec,
    designs: &[SessionDesign<T>],
    config: &FitConfig,
    mut params: ModelParams<T>,
) -> Result<FitResult<T>> {
    let horizon = params.horizon();
    params.validate(spec, horizon)?;
    check_rates(params.beta, designs)?;
    let d = penalty_operator::<T>(config.penalty.order, horizon.saturating_sub(1))?;
    let layout = RlLayout::new(spec, &config.pins);
    let admm = AdmmOptions::default();
    let hmm = config.model == ModelKind::Hmm && !params.is_engaged_only();
    let mut memory = LbfgsMemory::new();
    let mut hints: [Option<Vec<i8>>; 2] = [None, None];
    let mut warnings: Vec<String> = Vec::new();
    let warn = |w: String, list: &mut Vec<String>| {
        if !list.contains(&w) {
            list.push(w);
        }
    };

    let (mut post, mut q_cur) = e_step_full(&params, spec, designs)?;
    let mut obj = post.total_log_lik() - total_penalty(&params, &config.penalty, d.as_ref());
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=config.max_em_iters {
        iterations = iter;
        let mut flags = Vec::new();
        let q_start = q_cur + total_penalty(&params, &config.penalty, d.as_ref());
        let mut next = params.clone();

        if hmm && !config.pins.pi1 {
            next.pi1 = m_step_pi(&post);
        }
        if hmm && !config.pins.transitions {
            for j in 0..2 {
                let (into, total) = transition_counts(&post, j);
                let lambda = config.penalty.lambda(j);
                for _ in 0..config.zeta_step_count {
                    let cur = if j == 0 { &next.zeta0 } else { &next.zeta1 };
                    let upd = zeta_update(&into, &total, cur, lambda, d.as_ref(), &admm, &mut hints[j])?;
                    if upd.skipped {
                        flags.push(format!("zeta{j}_skipped"));
                    }
                    if upd.ridge_lifted {
                        flags.push(format!("zeta{j}_ridge"));
                        warn(
                            format!("Hessian of transition curve {j} ridge-lifted to {HESSIAN_FLOOR:e}"),
                            &mut warnings,
                        );
                    }
                    if let Some(w) = &upd.solver_warning {
                        flags.push(format!("zeta{j}_solver"));
                        warn(format!("generalized lasso for curve {j}: {w}"), &mut warnings);
                    }
                    if !upd.accepted && !upd.skipped {
                        flags.push(format!("zeta{j}_held"));
                    }
                    if j == 0 {
                        next.zeta0 = upd.zeta;
                    } else {
                        next.zeta1 = upd.zeta;
                    }
                }
            }
        }

        let (rl_next, skipped) = rl_block(&post, &next, spec, designs, &layout, config.rl_step_iters, &mut memory)?;
        if skipped {
            flags.push("rl_skipped".into());
        }
        next = rl_next;

        let (new_post, new_q) = e_step_full(&next, spec, designs)?;
        let new_obj = new_post.total_log_lik() - total_penalty(&next, &config.penalty, d.as_ref());
        trace.push(TraceEntry {
            iter,
            neg_expected_complete: q_start.to_f64_lossy(),
            penalized_log_lik: new_obj.to_f64_lossy(),
            flags,
        });
        let slack = T::lit(MONOTONE_SLACK) * (T::one() + obj.abs());
        if !new_obj.is_finite() || new_obj < obj - slack {
            return Err(Error::Numerical(format!(
                "penalized log-likelihood fell from {obj} to {new_obj} at EM sweep {iter}; last trace entries: {:?}",
                &trace[trace.len().saturating_sub(3)..]
            )));
        }
        let rel = (new_obj - obj).abs() / obj.abs().max(T::min_positive_value());
        params = next;
        post = new_post;
        q_cur = new_q;
        obj = new_obj;
        if rel < T::lit(config.em_tolerance) {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        log_lik: post.total_log_lik(),
        penalized_log_lik: obj,
        params,
        posteriors: post,
        trace,
        converged,
        iterations,
        warnings,
        config: config.clone(),
        start: 0,
        elapsed_secs: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::PosteriorEntry;

    fn entry(gamma1: f64) -> PosteriorEntry<f64> {
        PosteriorEntry {
            gamma: vec![[1.0 - gamma1, gamma1]],
            xi: vec![],
            log_lik: 0.0,
            scale_factors: vec![1.0],
        }
    }

    #[test]
    fn pi_update_is_clamped_mean() {
        let set = PosteriorSet {
            entries: vec![entry(0.2), entry(0.4), entry(0.6)],
        };
        assert!((m_step_pi(&set) - 0.4).abs() < 1e-15);
        let ones = PosteriorSet {
            entries: vec![entry(1.0), entry(1.0)],
        };
        assert_eq!(m_step_pi(&ones), 1.0 - 1e-6);
        assert_eq!(
            m_step_pi(&PosteriorSet {
                entries: vec![entry(0.8)]
            }),
            0.8
        );
    }

    fn counts() -> (Vec<f64>, Vec<f64>) {
        (vec![3.0, 1.0, 2.5, 0.5], vec![4.0, 4.0, 3.0, 1.0])
    }

    #[test]
    fn stationary_curve_is_returned() {
        let (into, total) = counts();
        let zeta: Vec<f64> = into.iter().zip(&total).map(|(a, b)| logit(a / b)).collect();
        let upd = zeta_update(&into, &total, &zeta, 0.0, None, &AdmmOptions::default(), &mut None).unwrap();
        for (a, b) in upd.zeta.iter().zip(&zeta) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_penalty_gives_constant_curve() {
        let (into, total) = counts();
        let d = penalty_operator::<f64>(0, 4).unwrap();
        let upd = zeta_update(
            &into,
            &total,
            &[0.0; 4],
            f64::INFINITY,
            d.as_ref(),
            &AdmmOptions::default(),
            &mut None,
        )
        .unwrap();
        assert!(upd.accepted);
        assert!(
            upd.zeta.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12),
            "{:?}",
            upd.zeta
        );
    }

    #[test]
    fn unpenalized_step_matches_newton() {
        let (into, total) = counts();
        let zeta = [0.1, -0.2, 0.3, 0.0];
        let upd = zeta_update(&into, &total, &zeta, 0.0, None, &AdmmOptions::default(), &mut None).unwrap();
        for t in 0..4 {
            let c = logistic(zeta[t]);
            let g = -into[t] + total[t] * c;
            let h = total[t] * c * (1.0 - c);
            let newton = zeta[t] - g / h;
            let damped = zeta[t] - g / h / 2f64.powi(upd.halvings as i32);
            assert!((upd.zeta[t] - damped).abs() < 1e-12 && (upd.halvings > 0 || (upd.zeta[t] - newton).abs() < 1e-12));
        }
    }

    #[test]
    fn empty_counts_skip() {
        let upd = zeta_update(
            &[0.0; 3],
            &[0.0; 3],
            &[1.0; 3],
            1.0,
            None,
            &AdmmOptions::default(),
            &mut None,
        )
        .unwrap();
        assert!(upd.skipped);
        assert_eq!(upd.zeta, vec![1.0; 3]);
    }

    #[test]
    fn tiny_hessian_is_lifted() {
        let upd = zeta_update(
            &[0.0, 1.0],
            &[0.0, 2.0],
            &[0.0, 0.0],
            0.0,
            None,
            &AdmmOptions::default(),
            &mut None,
        )
        .unwrap();
        assert!(upd.ridge_lifted);
    }

    #[test]
    fn config_json_roundtrip_with_infinite_penalty() {
        let mut c = FitConfig::default();
        c.penalty = PenaltySpec::fused(f64::INFINITY, 0.5);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"inf\""));
        let back: FitConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<FitConfig>(r#"{"max_em_iter": 3}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = FitConfig::default();
        c.em_tolerance = 0.0;
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.init.starts = 0;
        assert!(c.validate().is_err());
    }
}
