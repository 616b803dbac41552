//! Multi-actor centralized-critic learning for UAV swarm collision avoidance.
//!
//! The crate is organised the way the learning scheme is executed:
//!
//! - [`env`]: seedable 2D kinematic swarm simulator (spawn, sense, step, reward).
//! - [`nn`]: dense networks with exact reverse-mode gradients and Adam.
//! - [`critic`]: centralized Q(s, a) over joint observations and actions.
//! - [`policy`]: per-agent Gaussian actors with a tanh mean head.
//! - [`credit`]: counterfactual (MACA), COMA-continuous and Shapley advantages.
//! - [`eas`]: one-step lookahead emergency avoidance used at execution time.
//! - [`trainer`]: centralized training loop, checkpoints and resume.
//! - [`eval`], [`render`], [`trace`]: metrics, CSV formats and SVG output.

pub mod config;
pub mod credit;
pub mod critic;
pub mod eas;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod policy;
pub mod render;
pub mod seed;
pub mod trace;
pub mod trainer;

pub use error::{MacaError, Result};
