//! Refinement of candidate grasp poses by a classifier-driven gradient flow,
//! with Metropolis–Hastings baselines and brute-force oracles.

pub mod ad;
pub mod baselines;
pub mod builtin;
pub mod classifiers;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod kinematics;
pub mod oracle;
pub mod samplers;

pub use error::{Error, Result};
