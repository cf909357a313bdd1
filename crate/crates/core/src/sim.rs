//! Seeded synthetic datasets with known hidden strategies.
//!
//! Each subject draws from its own ChaCha stream (stream index = subject
//! index), so output does not depend on scheduling.

use crate::basis::{BasisKind, BasisSpec};
use crate::data::{Dataset, Session, StateSpace, TrialRecord};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rl::{check_effective_rate, dot, softmax_into};
use crate::scalar::logistic;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Continuous state, engaged/lapse chain.
    Case1,
    /// Continuous state, always engaged.
    Case2,
    /// Two-stimulus probabilistic reward task with a fixed reward schedule.
    Prt,
}

/// Hidden-chain parameters; curves are indexed by transition (length T − 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub pi1: f64,
    pub zeta0: Vec<f64>,
    pub zeta1: Vec<f64>,
}

impl ChainSpec {
    /// ζ₀ₜ = −1.5(1 + I(T/2 ≤ t < T)), ζ₁ₜ = 2(1 + I(T/2 ≤ t < T)), t = 1…T−1.
    pub fn step_curves(pi1: f64, horizon: usize) -> Self {
        let half = horizon as f64 / 2.0;
        let ind = |t: usize| if (t as f64) >= half && t < horizon { 1.0 } else { 0.0 };
        ChainSpec {
            pi1,
            zeta0: (1..horizon).map(|t| -1.5 * (1.0 + ind(t))).collect(),
            zeta1: (1..horizon).map(|t| 2.0 * (1.0 + ind(t))).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", deny_unknown_fields)]
pub enum RewardModel {
    /// Reward ~ Bernoulli(p_a · {a s + (1 − a)(1 − s)}) for two actions.
    Bernoulli { p0: f64, p1: f64 },
    /// Per block of `block_len` trials: half rich, half lean stimuli;
    /// `rich_quota` / `lean_quota` correct responses are rewarded.
    Schedule {
        block_len: usize,
        rich_quota: usize,
        lean_quota: usize,
        /// Category code of the rich stimulus.
        rich_stimulus: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub horizon: usize,
    pub beta: f64,
    pub rho: f64,
    pub nu: Vec<f64>,
    pub alpha_scalar: f64,
    pub alpha_pattern: Vec<f64>,
    /// Absent for case2 (always engaged).
    #[serde(default)]
    pub chain: Option<ChainSpec>,
    pub reward: RewardModel,
    pub seed: u64,
    /// Overrides every choice with this action (diagnostics only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_action: Option<usize>,
}

impl SimScenario {
    pub fn case1(n: usize, horizon: usize, seed: u64) -> Self {
        SimScenario {
            kind: ScenarioKind::Case1,
            n,
            horizon,
            beta: 0.05,
            rho: 4.0,
            nu: vec![0.0],
            alpha_scalar: 2.0,
            alpha_pattern: vec![1.0, -1.0, 0.0, 1.0],
            chain: Some(ChainSpec::step_curves(0.8, horizon)),
            reward: RewardModel::Bernoulli { p0: 0.5, p1: 1.0 },
            seed,
            force_action: None,
        }
    }

    pub fn case2(n: usize, horizon: usize, seed: u64) -> Self {
        SimScenario {
            kind: ScenarioKind::Case2,
            chain: None,
            ..SimScenario::case1(n, horizon, seed)
        }
    }

    /// First PRT block (100 trials) with the case1 learner and chain.
    pub fn prt(n: usize, seed: u64) -> Self {
        SimScenario {
            kind: ScenarioKind::Prt,
            n,
            horizon: 100,
            beta: 0.05,
            rho: 4.0,
            nu: vec![0.0],
            alpha_scalar: 2.0,
            alpha_pattern: vec![1.0, 0.0, 0.0, 1.0],
            chain: Some(ChainSpec::step_curves(0.8, 100)),
            reward: RewardModel::Schedule {
                block_len: 100,
                rich_quota: 30,
                lean_quota: 10,
                rich_stimulus: 1,
            },
            seed,
            force_action: None,
        }
    }

    pub fn action_count(&self) -> usize {
        2
    }

    /// Basis the scenario's learner uses (and that a fit should use).
    pub fn basis(&self) -> Result<BasisSpec> {
        match self.kind {
            ScenarioKind::Case1 | ScenarioKind::Case2 => BasisSpec::new(
                BasisKind::Linear { state_dim: 1 },
                StateSpace::unit_interval(),
                2,
                self.alpha_pattern.clone(),
                vec![true],
            ),
            ScenarioKind::Prt => BasisSpec::new(
                BasisKind::Indicator { levels: 2 },
                StateSpace::categorical(2)?,
                2,
                self.alpha_pattern.clone(),
                vec![false],
            ),
        }
    }

    pub fn truth(&self) -> ModelParams<f64> {
        match &self.chain {
            Some(c) if self.kind != ScenarioKind::Case2 => ModelParams {
                beta: self.beta,
                rho: self.rho,
                nu: self.nu.clone(),
                alpha_scalar: self.alpha_scalar,
                pi1: c.pi1,
                zeta0: c.zeta0.clone(),
                zeta1: c.zeta1.clone(),
            },
            _ => ModelParams::engaged_only(self.beta, self.rho, self.nu.clone(), self.alpha_scalar, self.horizon),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.horizon < 2 {
            return Err(Error::Config("scenario needs n ≥ 1 and T ≥ 2".into()));
        }
        let spec = self.basis()?;
        let truth = self.truth();
        if self.kind == ScenarioKind::Case2 {
            if self.chain.is_some() {
                return Err(Error::Config("case2 is always engaged; remove `chain`".into()));
            }
        } else if self.chain.is_none() {
            return Err(Error::Config("case1/prt scenarios need `chain`".into()));
        }
        truth.validate(&spec, self.horizon)?;
        let max_norm = match self.kind {
            ScenarioKind::Prt => 1.0,
            _ => 2.0,
        };
        check_effective_rate(self.beta, max_norm)?;
        if let Some(a) = self.force_action {
            if a >= self.action_count() {
                return Err(Error::domain("force_action", format!("{a} not in 0..2")));
            }
        }
        match (&self.kind, &self.reward) {
            (
                ScenarioKind::Prt,
                RewardModel::Schedule {
                    block_len,
                    rich_quota,
                    lean_quota,
                    rich_stimulus,
                },
            ) => {
                if *block_len == 0 || block_len % 2 != 0 {
                    return Err(Error::Config("PRT block length must be even and positive".into()));
                }
                if self.horizon % block_len != 0 {
                    return Err(Error::Config(format!(
                        "PRT horizon {} is not a multiple of the block length {block_len}",
                        self.horizon
                    )));
                }
                if *rich_quota > block_len / 2 || *lean_quota > block_len / 2 {
                    return Err(Error::Config("reward quota exceeds the stimuli per block".into()));
                }
                if *rich_stimulus > 1 {
                    return Err(Error::Config("rich_stimulus must be 0 or 1".into()));
                }
            }
            (ScenarioKind::Prt, _) => return Err(Error::Config("PRT needs a reward schedule".into())),
            (_, RewardModel::Bernoulli { p0, p1 }) => {
                if !(0.0..=1.0).contains(p0) || !(0.0..=1.0).contains(p1) {
                    return Err(Error::Config(
                        "Bernoulli success probabilities must lie in [0,1]".into(),
                    ));
                }
            }
            (_, RewardModel::Schedule { .. }) => {
                return Err(Error::Config("reward schedules are only defined for PRT".into()))
            }
        }
        Ok(())
    }
}

/// A PRT block where fewer correct responses than the quota occurred after
/// the scheduled positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub subject: String,
    pub block: usize,
    pub rich_missing: usize,
    pub lean_missing: usize,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub dataset: Dataset,
    /// U_it, 1 = engaged.
    pub hidden_strategies: Vec<Vec<u8>>,
    pub truth: ModelParams<f64>,
    pub spec: BasisSpec,
    pub shortfalls: Vec<Shortfall>,
}

struct SubjectDraw {
    session: Session,
    hidden: Vec<u8>,
    shortfalls: Vec<Shortfall>,
}

pub fn generate(scenario: &SimScenario) -> Result<SimOutput> {
    scenario.validate()?;
    let spec = scenario.basis()?;
    let truth = scenario.truth();
    let draws = (0..scenario.n)
        .into_par_iter()
        .map(|i| simulate_subject(scenario, &spec, &truth, i))
        .collect::<Result<Vec<_>>>()?;
    let mut sessions = Vec::with_capacity(scenario.n);
    let mut hidden = Vec::with_capacity(scenario.n);
    let mut shortfalls = Vec::new();
    for d in draws {
        sessions.push(d.session);
        hidden.push(d.hidden);
        shortfalls.extend(d.shortfalls);
    }
    let dataset = Dataset::new(sessions, spec.state_space().clone(), scenario.action_count(), 1.0)?;
    Ok(SimOutput {
        dataset,
        hidden_strategies: hidden,
        truth,
        spec,
        shortfalls,
    })
}

pub fn subject_id(i: usize) -> String {
    format!("s{:04}", i + 1)
}

/// Reward schedule state for one PRT block.
struct BlockSchedule {
    /// Stimulus per trial within the block.
    stimuli: Vec<usize>,
    /// Trial positions whose correct response is scheduled for reward.
    scheduled: Vec<bool>,
}

fn draw_block(
    rng: &mut ChaCha8Rng,
    block_len: usize,
    rich: usize,
    rich_quota: usize,
    lean_quota: usize,
) -> BlockSchedule {
    let half = block_len / 2;
    let mut stimuli: Vec<usize> = (0..block_len).map(|k| if k < half { rich } else { 1 - rich }).collect();
    stimuli.shuffle(rng);
    let mut scheduled = vec![false; block_len];
    for (stim, quota) in [(rich, rich_quota), (1 - rich, lean_quota)] {
        let positions: Vec<usize> = (0..block_len).filter(|&k| stimuli[k] == stim).collect();
        for &k in positions.choose_multiple(rng, quota) {
            scheduled[k] = true;
        }
    }
    BlockSchedule { stimuli, scheduled }
}

fn simulate_subject(
    scenario: &SimScenario,
    spec: &BasisSpec,
    truth: &ModelParams<f64>,
    i: usize,
) -> Result<SubjectDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(i as u64);
    let d = scenario.action_count();
    let t_max = scenario.horizon;
    let mut delta = truth.initial_coefficients(spec);
    let intercepts = truth.intercepts();
    let mut q = vec![0.0; d];
    let mut probs = vec![0.0; d];
    let mut phi = vec![vec![0.0; spec.dim()]; d];
    let id = subject_id(i);

    let mut u: u8 = match &scenario.chain {
        Some(c) if scenario.kind != ScenarioKind::Case2 => u8::from(rng.gen::<f64>() < c.pi1),
        _ => 1,
    };
    let mut trials = Vec::with_capacity(t_max);
    let mut hidden = Vec::with_capacity(t_max);
    let mut shortfalls = Vec::new();

    let mut block: Option<BlockSchedule> = None;
    let mut pending = [0usize; 2];

    for t in 0..t_max {
        let state = match &scenario.reward {
            RewardModel::Schedule {
                block_len,
                rich_quota,
                lean_quota,
                rich_stimulus,
            } => {
                if t % block_len == 0 {
                    block = Some(draw_block(
                        &mut rng,
                        *block_len,
                        *rich_stimulus,
                        *rich_quota,
                        *lean_quota,
                    ));
                    pending = [0, 0];
                }
                block.as_ref().expect("block drawn").stimuli[t % block_len] as f64
            }
            RewardModel::Bernoulli { .. } => rng.gen::<f64>(),
        };
        let state_v = [state];
        for a in 0..d {
            spec.evaluate_into(a, &state_v, &mut phi[a])?;
            q[a] = dot(&phi[a], &delta);
        }
        let action = if let Some(a) = scenario.force_action {
            a
        } else if u == 1 {
            softmax_into(&intercepts, truth.rho, &q, &mut probs);
            sample_categorical(&mut rng, &probs)
        } else {
            rng.gen_range(0..d)
        };
        let reward = match &scenario.reward {
            RewardModel::Bernoulli { p0, p1 } => {
                let p = if action == 1 { p1 * state } else { p0 * (1.0 - state) };
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            RewardModel::Schedule { block_len, .. } => {
                let sched = block.as_ref().expect("block drawn");
                let k = t % block_len;
                let stim = sched.stimuli[k];
                if sched.scheduled[k] {
                    pending[stim] += 1;
                }
                if action == stim && pending[stim] > 0 {
                    pending[stim] -= 1;
                    1.0
                } else {
                    0.0
                }
            }
        };
        let a_phi = phi[action].clone();
        let pred = q[action];
        let step = truth.beta * (reward - pred);
        for (dv, f) in delta.iter_mut().zip(&a_phi) {
            *dv += step * f;
        }
        trials.push(TrialRecord {
            trial: t + 1,
            state: state_v.to_vec(),
            action,
            reward,
        });
        hidden.push(u);

        if let RewardModel::Schedule {
            block_len,
            rich_stimulus,
            ..
        } = &scenario.reward
        {
            if (t + 1) % block_len == 0 && pending.iter().any(|&p| p > 0) {
                shortfalls.push(Shortfall {
                    subject: id.clone(),
                    block: t / block_len + 1,
                    rich_missing: pending[*rich_stimulus],
                    lean_missing: pending[1 - rich_stimulus],
                });
            }
        }

        if t + 1 < t_max {
            if let Some(c) = scenario.chain.as_ref().filter(|_| scenario.kind != ScenarioKind::Case2) {
                let z = if u == 1 { c.zeta1[t] } else { c.zeta0[t] };
                u = u8::from(rng.gen::<f64>() < logistic(z));
            }
        }
    }
    Ok(SubjectDraw {
        session: Session { subject_id: id, trials },
        hidden,
        shortfalls,
    })
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// P(U_t = 1) implied by π₁ and the transition curves.
pub fn engaged_marginal(truth: &ModelParams<f64>) -> Vec<f64> {
    let mut p = truth.pi1;
    let mut out = vec![p];
    for (&z0, &z1) in truth.zeta0.iter().zip(&truth.zeta1) {
        p = p * logistic(z1) + (1.0 - p) * logistic(z0);
        out.push(p);
    }
    out
}

/// Fraction of (subject, trial) cells where the prediction matches.
pub fn strategy_accuracy(predicted: &[Vec<u8>], truth: &[Vec<u8>]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.iter().zip(truth).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Dimension("strategy matrices differ in shape".into()));
    }
    let cells: usize = truth.iter().map(Vec::len).sum();
    if cells == 0 {
        return Err(Error::Dimension("strategy matrices are empty".into()));
    }
    let hits: usize = predicted
        .iter()
        .zip(truth)
        .map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x == y).count())
        .sum();
    Ok(hits as f64 / cells as f64)
}

/// Long-format `subject,trial,u`.
pub fn write_hidden_strategies_csv<W: Write>(w: W, data: &Dataset, hidden: &[Vec<u8>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["subject", "trial", "u"])?;
    for (s, row) in data.sessions().iter().zip(hidden) {
        for (t, u) in row.iter().enumerate() {
            out.write_record([s.subject_id.as_str(), &(t + 1).to_string(), &u.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
