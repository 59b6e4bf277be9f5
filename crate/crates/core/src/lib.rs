//! Simulation and resource allocation for two-tier over-the-air federated
//! learning: devices are grouped into clusters, subordinates send normalized
//! gradients to a cluster lead by analog superposition, and the leads forward
//! the superposed signals to a parameter server.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aircomp;
pub mod channel;
pub mod clustering;
pub mod convergence;
pub mod data;
pub mod error;
pub mod harness;
pub mod idx;
pub mod model;
pub mod power;
pub mod rng;

pub use error::{Error, Result};
