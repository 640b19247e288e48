//! Reach-avoid safety games on discrete-time controlled systems with bounded
//! disturbances: exact tabular solvers for low-dimensional systems, adversarial
//! actor-critic self-play for everything else, and the gameplay safety filter
//! that monitors a task policy by simulating a match between the learned safety
//! fallback and a learned worst-case adversary.
//!
//! The crate is `no_std` (with `alloc`); all file formats, networking, and the
//! command-line interface live in the companion `reachguard` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bust;
pub mod dp;
pub mod env;
pub mod error;
pub mod filter;
pub mod isaacs;
pub mod nnet;
pub mod outcome;
pub mod policy;
pub mod rng;
pub mod tasks;

pub use env::{EnvConfig, EnvSpec, Interval, MarginSpec};
pub use error::Error;
pub use outcome::{GameResult, Trajectory, Verdict};
pub use policy::Policy;
pub use rng::Rng;
