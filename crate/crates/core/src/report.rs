//! Serializable `f64` views of fits and parameters.

use crate::em::{FitConfig, FitResult, TraceEntry};
use crate::error::Result;
use crate::params::ModelParams;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Order in which an EM sweep updates the parameter blocks.
pub const SWEEP_ORDER: [&str; 4] = ["pi1", "zeta0", "zeta1", "rl"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsReport {
    pub beta: f64,
    pub rho: f64,
    pub nu: Vec<f64>,
    pub alpha_scalar: f64,
    pub pi1: f64,
    #[serde(with = "crate::serde_ext::extended_f64_vec")]
    pub zeta0: Vec<f64>,
    #[serde(with = "crate::serde_ext::extended_f64_vec")]
    pub zeta1: Vec<f64>,
}

impl<T: Scalar> From<&ModelParams<T>> for ParamsReport {
    fn from(p: &ModelParams<T>) -> Self {
        let c = |v: T| v.to_f64_lossy();
        ParamsReport {
            beta: c(p.beta),
            rho: c(p.rho),
            nu: p.nu.iter().map(|&v| c(v)).collect(),
            alpha_scalar: c(p.alpha_scalar),
            pi1: c(p.pi1),
            zeta0: p.zeta0.iter().map(|&v| c(v)).collect(),
            zeta1: p.zeta1.iter().map(|&v| c(v)).collect(),
        }
    }
}

impl ParamsReport {
    pub fn to_params<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            beta: T::lit(self.beta),
            rho: T::lit(self.rho),
            nu: self.nu.iter().map(|&v| T::lit(v)).collect(),
            alpha_scalar: T::lit(self.alpha_scalar),
            pi1: T::lit(self.pi1),
            zeta0: self.zeta0.iter().map(|&v| T::lit(v)).collect(),
            zeta1: self.zeta1.iter().map(|&v| T::lit(v)).collect(),
        }
    }
}

/// Everything in a [`FitResult`] except posteriors (written as CSV) and
/// wall-clock timing (kept out so reports are reproducible byte for byte).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub params: ParamsReport,
    pub log_lik: f64,
    pub penalized_log_lik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start: usize,
    pub sweep_order: Vec<String>,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    pub config: FitConfig,
}

impl<T: Scalar> From<&FitResult<T>> for FitReport {
    fn from(r: &FitResult<T>) -> Self {
        FitReport {
            schema_version: SCHEMA_VERSION,
            params: ParamsReport::from(&r.params),
            log_lik: r.log_lik.to_f64_lossy(),
            penalized_log_lik: r.penalized_log_lik.to_f64_lossy(),
            converged: r.converged,
            iterations: r.iterations,
            start: r.start,
            sweep_order: SWEEP_ORDER.iter().map(|s| s.to_string()).collect(),
            trace: r.trace.clone(),
            warnings: r.warnings.clone(),
            config: r.config.clone(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_curves_roundtrip() {
        let p = ModelParams::engaged_only(0.1, 2.0, vec![0.0], 1.0, 4);
        let r = ParamsReport::from(&p);
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains(r#""zeta0":["inf","inf","inf"]"#));
        let back: ParamsReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.to_params::<f64>(), p);
    }
}
