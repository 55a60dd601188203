//! Pursuit-evasion toolkit: a runner drone navigates to a target while
//! chaser drones try to intercept it.
//!
//! The crate holds the kinematic simulator, the arena, dense Gaussian
//! policies with analytic gradients, a PPO trainer, the alternating
//! multi-stage self-play scheduler, closed-form baselines and the evaluation
//! harness.

pub mod arena;
pub mod baselines;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod policy;
pub mod ppo;
pub mod scheduler;

pub use error::{Error, Result};
