//! KFCPO: constrained policy optimization with Kronecker-factored natural
//! gradients, margin-aware reward/cost gradient blending, and minibatch-level
//! KL rollback.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`nn`]: minimal MLP stack with analytic backprop that captures the
//!   per-layer statistics K-FAC needs.
//! - [`kfac`]: Kronecker-factored curvature state (EMA factors, damped
//!   eigendecomposition inverses, Fisher quadratic forms).
//! - [`safegrad`]: margin-aware blending of reward and cost natural
//!   gradients with conflict projection.
//! - [`trust`]: KL-based step scaling, momentum updates, and the rollback
//!   decision.
//! - [`cmdp`]: built-in desk-scale constrained MDP environments.
//! - [`rollout`]: on-policy collection and dual-signal GAE.
//! - [`engine`]: the full training loop, configuration, checkpoints, and
//!   metrics.

pub mod cmdp;
pub mod engine;
#[cfg(test)]
pub(crate) mod testutil;
pub mod error;
pub mod kfac;
pub mod nn;
pub mod rollout;
pub mod safegrad;
pub mod trust;

pub use error::{Error, Result};
