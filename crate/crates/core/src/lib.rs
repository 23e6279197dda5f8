//! Offline model-based guided reward learning for discrete-action dosing
//! trajectories.
//!
//! The crate covers the full pipeline: trajectory ingestion and replay
//! buffers, a synthetic ground-truth patient MDP, an ensemble of
//! probabilistic dynamics models with dyna-style rollouts, a conservative
//! discrete soft actor-critic, sample-based maximum-entropy reward learning,
//! an orchestrated training loop, and an off-policy evaluation suite.

pub mod config;
pub mod data;
pub mod dynamics;
pub mod agent;
pub mod error;
pub mod eval;
pub mod kv;
pub mod nn;
pub mod orchestrator;
pub mod reward;
pub mod rng;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};
