//! Library for running regret experiments on finite linear MDPs.
//!
//! The crate simulates small episodic MDPs whose transition kernels and
//! rewards factor through a d-dimensional feature map, and implements an
//! optimistic agent built from three pieces: a variance-weighted ridge
//! recursion that estimates backups of candidate value functions, a
//! clipped-correlation confidence construction for the reward parameter,
//! and an epsilon-net over the induced value-function class. Planning is
//! either exact elimination over an explicit candidate model list or a
//! bonus-based backward induction. A brute-force oracle module checks the
//! combinatorial and concentration inequalities the agent relies on, and a
//! harness runs seeded, reproducible experiments with CSV regret logs.

pub mod baselines;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod mdp;
pub mod nets;
pub mod oracle;
pub mod planner;
pub mod rng;
pub mod voful;

pub use error::{Error, Result};
