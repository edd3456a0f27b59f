//! Multi-agent reinforcement learning for Volt-Var control on radial
//! distribution feeders.
//!
//! The crate bundles a backward/forward sweep power-flow solver, synthetic
//! load and PV profiles, an MDP environment scored against a do-nothing
//! counterfactual, a from-scratch DDPG implementation, the two-stage
//! (individual then cooperative) trainer, and an evaluation harness with a
//! conventional droop baseline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod eval;
pub mod feeder;
pub mod neuro;
pub mod profiles;
pub mod reward;
pub mod trainer;
