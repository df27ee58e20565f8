//! Open-loop underapproximation of the terminal-time stochastic reach-avoid
//! probability for discrete-time LTI systems.
//!
//! The open-loop value is computed by maximizing a multivariate Gaussian
//! rectangle probability over stacked input sequences. A gridded dynamic
//! programming solver and a Monte-Carlo estimator are included for
//! cross-checking.

pub mod dp;
pub mod error;
pub mod harness;
pub mod lti;
pub mod mvn;
pub mod objective;
pub mod solvers;

pub use error::{Error, Result};
pub use lti::{
    ConcatenatedDynamics, Disturbance, DisturbanceSampler, GaussianDisturbance, HyperRect,
    LtiSystem, OpenLoopPolicy, ReachAvoidQuery, UniformDisturbance,
};
pub use mvn::{GaussianVector, QuadConfig, QuadResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
