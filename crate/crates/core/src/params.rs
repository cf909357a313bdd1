use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::scalar::{logistic, Scalar};

/// Full RL-HMM parameter vector.
///
/// The learner's initial coefficients are `(alpha_scalar / rho) * pattern`
/// with the pattern taken from the [`BasisSpec`]. `zeta0[t]`/`zeta1[t]` are
/// the logits of P(engaged at t+2 | lapse/engaged at t+1), 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub beta: T,
    pub rho: T,
    /// Intercepts ν₁…ν_{D−1}; ν₀ ≡ 0 is implicit.
    pub nu: Vec<T>,
    pub alpha_scalar: T,
    pub pi1: T,
    pub zeta0: Vec<T>,
    pub zeta1: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Constant transition curves `logit(c01)`, `logit(c11)` over `horizon`.
    pub fn with_constant_transitions(
        beta: T,
        rho: T,
        nu: Vec<T>,
        alpha_scalar: T,
        pi1: T,
        zeta0: T,
        zeta1: T,
        horizon: usize,
    ) -> Self {
        let m = horizon.saturating_sub(1);
        ModelParams {
            beta,
            rho,
            nu,
            alpha_scalar,
            pi1,
            zeta0: vec![zeta0; m],
            zeta1: vec![zeta1; m],
        }
    }

    /// The RL-only model written as an absorbing engaged chain
    /// (π₁ = 1, P(engaged → engaged) = 1). Its HMM likelihood equals the plain
    /// softmax likelihood exactly.
    pub fn engaged_only(beta: T, rho: T, nu: Vec<T>, alpha_scalar: T, horizon: usize) -> Self {
        let m = horizon.saturating_sub(1);
        ModelParams {
            beta,
            rho,
            nu,
            alpha_scalar,
            pi1: T::one(),
            zeta0: vec![T::infinity(); m],
            zeta1: vec![T::infinity(); m],
        }
    }

    pub fn is_engaged_only(&self) -> bool {
        self.pi1 == T::one() && self.zeta1.iter().all(|z| *z == T::infinity())
    }

    pub fn horizon(&self) -> usize {
        self.zeta0.len() + 1
    }

    pub fn validate(&self, spec: &BasisSpec, horizon: usize) -> Result<()> {
        let bad = |f: &str, r: String| Err(Error::domain(f, r));
        if !(self.beta > T::zero() && self.beta < T::one()) {
            return bad("beta", format!("{} not in (0,1)", self.beta));
        }
        if !(self.rho > T::zero() && self.rho.is_finite()) {
            return bad("rho", format!("{} must be positive", self.rho));
        }
        if self.nu.len() + 1 != spec.action_count() {
            return bad("nu", format!("expected {} entries", spec.action_count() - 1));
        }
        if self.nu.iter().any(|v| !v.is_finite()) {
            return bad("nu", "entries must be finite".into());
        }
        for (v, free) in self.nu.iter().zip(spec.nu_free()) {
            if !free && *v != T::zero() {
                return bad("nu", "pinned intercepts must be 0".into());
            }
        }
        if !self.alpha_scalar.is_finite() {
            return bad("alpha_scalar", "must be finite".into());
        }
        let m = horizon.saturating_sub(1);
        if self.zeta0.len() != m || self.zeta1.len() != m {
            return bad("zeta", format!("curves must have length T-1 = {m}"));
        }
        if self.is_engaged_only() {
            return Ok(());
        }
        if !(self.pi1 > T::zero() && self.pi1 < T::one()) {
            return bad("pi1", format!("{} not in (0,1)", self.pi1));
        }
        if self.zeta0.iter().chain(&self.zeta1).any(|v| !v.is_finite()) {
            return bad("zeta", "entries must be finite".into());
        }
        Ok(())
    }

    /// Initial coefficient vector δ¹ = (α/ρ)·pattern.
    pub fn initial_coefficients(&self, spec: &BasisSpec) -> Vec<T> {
        let scale = self.alpha_scalar / self.rho;
        spec.alpha_pattern().iter().map(|&v| scale * T::lit(v)).collect()
    }

    /// Softmax intercepts for all D actions (ν₀ = 0 prepended).
    pub fn intercepts(&self) -> Vec<T> {
        std::iter::once(T::zero()).chain(self.nu.iter().copied()).collect()
    }

    /// P(engaged next | lapse now) for each transition.
    pub fn c01(&self) -> Vec<T> {
        self.zeta0.iter().map(|&z| logistic(z)).collect()
    }

    /// P(engaged next | engaged now) for each transition.
    pub fn c11(&self) -> Vec<T> {
        self.zeta1.iter().map(|&z| logistic(z)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        ModelParams {
            beta: c(self.beta),
            rho: c(self.rho),
            nu: self.nu.iter().map(|&v| c(v)).collect(),
            alpha_scalar: c(self.alpha_scalar),
            pi1: c(self.pi1),
            zeta0: self.zeta0.iter().map(|&v| c(v)).collect(),
            zeta1: self.zeta1.iter().map(|&v| c(v)).collect(),
        }
    }
}
