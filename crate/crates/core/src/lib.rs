//! Reinforcement-learning hidden Markov models for choice data from reward
//! tasks, fitted by penalized expectation-maximisation.
//!
//! Numerical kernels are generic over [`Scalar`] (`f32`, `f64`); the aliases
//! below fix the usual `f64` instantiation.

pub mod banded;
pub mod basis;
pub mod boxopt;
pub mod data;
pub mod em;
pub mod engage;
pub mod error;
pub mod genlasso;
pub mod hmm;
pub mod inference;
pub mod params;
pub mod report;
pub mod rl;
pub mod scalar;
pub mod serde_ext;
pub mod sim;

pub use basis::{BasisKind, BasisSpec};
pub use data::{Dataset, DatasetMeta, Session, StateKind, StateSpace, TrialRecord};
pub use em::{FitConfig, ModelKind};
pub use error::{Error, Result};
pub use genlasso::PenaltySpec;
pub use scalar::Scalar;

pub type Real = f64;
pub type Params = params::ModelParams<Real>;
pub type Posteriors = hmm::PosteriorSet<Real>;
pub type Fit = em::FitResult<Real>;
pub type Trajectory = rl::QTrajectory<Real>;
