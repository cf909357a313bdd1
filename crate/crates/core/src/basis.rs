//! Feature maps φ(a, s) used by the learner's linear value approximation.

use crate::data::{Dataset, StateKind, StateSpace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum BasisKind {
    /// One indicator per (action, categorical state) cell, ordered with the
    /// action index varying fastest: index = state * D + action.
    Indicator { levels: usize },
    /// `e_a ⊗ (1, s_1, …, s_k)`.
    Linear { state_dim: usize },
    /// `e_a ⊗ B(s)` with a clamped B-spline basis on a scalar state.
    /// `knots` is the full knot vector (boundary knots repeated degree+1 times).
    BSpline { degree: usize, knots: Vec<f64> },
}

/// Feature map plus the structural choices that go with it: the fixed
/// direction of the initial coefficient vector and which intercepts are free.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    kind: BasisKind,
    state_space: StateSpace,
    action_count: usize,
    alpha_pattern: Vec<f64>,
    nu_free: Vec<bool>,
}

impl BasisSpec {
    pub fn new(
        kind: BasisKind,
        state_space: StateSpace,
        action_count: usize,
        alpha_pattern: Vec<f64>,
        nu_free: Vec<bool>,
    ) -> Result<Self> {
        if action_count < 2 {
            return Err(Error::Config("basis needs at least two actions".into()));
        }
        match &kind {
            BasisKind::Indicator { levels } => {
                if state_space.levels() != Some(*levels) {
                    return Err(Error::Config(format!(
                        "indicator basis over {levels} levels needs a categorical state space with {levels} levels"
                    )));
                }
            }
            BasisKind::Linear { state_dim } => {
                if state_space.dim() != *state_dim {
                    return Err(Error::Config(format!(
                        "linear basis expects {state_dim} state coordinates, space has {}",
                        state_space.dim()
                    )));
                }
            }
            BasisKind::BSpline { degree, knots } => {
                if state_space.dim() != 1 || state_space.kind != StateKind::Continuous {
                    return Err(Error::Config("B-spline basis needs a scalar continuous state".into()));
                }
                if knots.len() < 2 * (degree + 1) {
                    return Err(Error::Config("B-spline knot vector too short".into()));
                }
                if knots.windows(2).any(|w| w[1] < w[0]) || knots.iter().any(|k| !k.is_finite()) {
                    return Err(Error::Config("B-spline knots must be finite and non-decreasing".into()));
                }
            }
        }
        let spec = BasisSpec {
            kind,
            state_space,
            action_count,
            alpha_pattern,
            nu_free,
        };
        if spec.alpha_pattern.len() != spec.dim() {
            return Err(Error::Config(format!(
                "alpha pattern has length {}, basis dimension is {}",
                spec.alpha_pattern.len(),
                spec.dim()
            )));
        }
        if spec.alpha_pattern.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("alpha pattern must be finite".into()));
        }
        if spec.nu_free.len() != action_count - 1 {
            return Err(Error::Config(format!(
                "nu_free needs {} flags (actions 1..D-1), got {}",
                action_count - 1,
                spec.nu_free.len()
            )));
        }
        Ok(spec)
    }

    /// Per-action linear basis on `[0,1]` with two actions and α pattern
    /// (1, −1, 0, 1): action 0 starts valued at 1 − s, action 1 at s.
    pub fn unit_linear_two_action() -> Self {
        BasisSpec::new(
            BasisKind::Linear { state_dim: 1 },
            StateSpace::unit_interval(),
            2,
            vec![1.0, -1.0, 0.0, 1.0],
            vec![true],
        )
        .expect("valid preset")
    }

    /// Two-stimulus, two-response indicator basis with the correct responses
    /// initially valued (pattern (1, 0, 0, 1)) and ν pinned to zero.
    pub fn two_stimulus_indicator() -> Self {
        BasisSpec::new(
            BasisKind::Indicator { levels: 2 },
            StateSpace::categorical(2).expect("two levels"),
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![false],
        )
        .expect("valid preset")
    }

    /// Per-action clamped B-spline basis on the (scalar) state space. When
    /// `interior` is `None`, `n_interior` knots are placed at equally spaced
    /// quantiles of the states observed in `data`.
    pub fn bspline(
        data: &Dataset,
        degree: usize,
        interior: Option<Vec<f64>>,
        n_interior: usize,
        alpha_pattern: Vec<f64>,
        nu_free: Vec<bool>,
    ) -> Result<Self> {
        let space = data.state_space().clone();
        if space.dim() != 1 {
            return Err(Error::Config("B-spline basis needs a scalar state".into()));
        }
        let (lo, hi) = space.bounds[0];
        let interior = match interior {
            Some(k) => k,
            None => quantile_knots(data, n_interior),
        };
        if interior.iter().any(|&k| !(k > lo && k < hi)) {
            return Err(Error::Config(
                "interior knots must lie strictly inside the state bounds".into(),
            ));
        }
        let mut knots = vec![lo; degree + 1];
        knots.extend(interior);
        knots.extend(std::iter::repeat(hi).take(degree + 1));
        BasisSpec::new(
            BasisKind::BSpline { degree, knots },
            space,
            data.action_count(),
            alpha_pattern,
            nu_free,
        )
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn state_space(&self) -> &StateSpace {
        &self.state_space
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn alpha_pattern(&self) -> &[f64] {
        &self.alpha_pattern
    }

    pub fn nu_free(&self) -> &[bool] {
        &self.nu_free
    }

    /// Features per action block.
    pub fn block_len(&self) -> usize {
        match &self.kind {
            BasisKind::Indicator { levels } => *levels,
            BasisKind::Linear { state_dim } => 1 + state_dim,
            BasisKind::BSpline { degree, knots } => knots.len() - degree - 1,
        }
    }

    /// Feature length p.
    pub fn dim(&self) -> usize {
        self.action_count * self.block_len()
    }

    /// φ(a, s).
    pub fn evaluate<T: Scalar>(&self, action: usize, state: &[f64]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim()];
        self.evaluate_into(action, state, &mut out)?;
        Ok(out)
    }

    /// Writes φ(a, s) into `out` (length p, overwritten).
    pub fn evaluate_into<T: Scalar>(&self, action: usize, state: &[f64], out: &mut [T]) -> Result<()> {
        if action >= self.action_count {
            return Err(Error::domain(
                "action",
                format!("{action} not in 0..{}", self.action_count),
            ));
        }
        self.state_space.check(state)?;
        if out.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "feature buffer has length {}, expected {}",
                out.len(),
                self.dim()
            )));
        }
        out.iter_mut().for_each(|v| *v = T::zero());
        let d = self.action_count;
        match &self.kind {
            BasisKind::Indicator { .. } => {
                out[state[0] as usize * d + action] = T::one();
            }
            BasisKind::Linear { .. } => {
                let block = &mut out[action * self.block_len()..(action + 1) * self.block_len()];
                block[0] = T::one();
                for (b, &s) in block[1..].iter_mut().zip(state) {
                    *b = T::lit(s);
                }
            }
            BasisKind::BSpline { degree, knots } => {
                let nb = self.block_len();
                let block = &mut out[action * nb..(action + 1) * nb];
                bspline_values(*degree, knots, state[0], block);
            }
        }
        Ok(())
    }

    /// Supremum of φᵀφ over the declared state space.
    pub fn sup_norm_sq(&self) -> f64 {
        match &self.kind {
            // Nonnegative B-splines sum to one, so their squares sum to at most one.
            BasisKind::Indicator { .. } | BasisKind::BSpline { .. } => 1.0,
            BasisKind::Linear { .. } => {
                1.0 + self
                    .state_space
                    .bounds
                    .iter()
                    .map(|&(lo, hi)| (lo * lo).max(hi * hi))
                    .sum::<f64>()
            }
        }
    }

    /// Largest φᵀφ over the (action, state) pairs observed in `data`.
    pub fn max_observed_norm_sq(&self, data: &Dataset) -> Result<f64> {
        let mut buf = vec![0.0_f64; self.dim()];
        let mut best: f64 = 0.0;
        for s in data.sessions() {
            for tr in &s.trials {
                self.evaluate_into(tr.action, &tr.state, &mut buf)?;
                best = best.max(buf.iter().map(|v| v * v).sum());
            }
        }
        Ok(best)
    }

    pub fn check_compatible(&self, data: &Dataset) -> Result<()> {
        if data.action_count() != self.action_count {
            return Err(Error::Config(format!(
                "basis has {} actions, data has {}",
                self.action_count,
                data.action_count()
            )));
        }
        if data.state_space() != &self.state_space {
            return Err(Error::Config("basis and data declare different state spaces".into()));
        }
        Ok(())
    }
}

fn quantile_knots(data: &Dataset, n_interior: usize) -> Vec<f64> {
    let mut states: Vec<f64> = data
        .sessions()
        .iter()
        .flat_map(|s| s.trials.iter().map(|t| t.state[0]))
        .collect();
    states.sort_by(f64::total_cmp);
    let n = states.len();
    (1..=n_interior)
        .map(|j| {
            let q = j as f64 / (n_interior + 1) as f64;
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            states[lo] + (pos - lo as f64) * (states[hi] - states[lo])
        })
        .collect()
}

/// Clamped B-spline basis values at `x` (Cox–de Boor, triangular scheme).
fn bspline_values<T: Scalar>(degree: usize, knots: &[f64], x: f64, out: &mut [T]) {
    let nb = knots.len() - degree - 1;
    // Knot span: largest i in [degree, nb-1] with knots[i] <= x (right end folds into the last span).
    let mut span = degree;
    while span + 1 < nb && knots[span + 1] <= x {
        span += 1;
    }
    let mut n = vec![0.0_f64; degree + 1];
    let mut left = vec![0.0_f64; degree + 1];
    let mut right = vec![0.0_f64; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let tmp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    for (j, v) in n.iter().enumerate() {
        out[span - degree + j] = T::lit(*v);
    }
}
