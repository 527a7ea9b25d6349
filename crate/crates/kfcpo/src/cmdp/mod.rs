//! Desk-scale constrained MDP environments.
//!
//! Two built-in tasks: a continuous 2-D point navigator with circular
//! hazards and a discrete hazard chain small enough to check against
//! dynamic programming. Both emit a nonnegative per-step cost next to the
//! reward, and both are deterministic functions of (seed, action sequence).

mod chain;
mod point;

pub use chain::{ChainConfig, HazardChainEnv};
pub use point::{PointConfig, PointHazardEnv};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Continuous { dim: usize },
    Discrete { n: usize },
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: DVector<f64>,
    pub reward: f64,
    /// Nonnegative constraint signal.
    pub cost: f64,
    /// Terminal state reached.
    pub done: bool,
    /// Episode cut by the horizon.
    pub truncated: bool,
}

pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn horizon(&self) -> usize;
    /// Starts a new episode with a layout fully determined by `seed`.
    fn reset(&mut self, seed: u64) -> Result<DVector<f64>>;
    fn step(&mut self, action: &Action) -> Result<StepResult>;
}

/// Buildable description of an environment, kept in the training config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum EnvSpec {
    Point(PointConfig),
    Chain(ChainConfig),
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Env>> {
        match self {
            EnvSpec::Point(cfg) => Ok(Box::new(PointHazardEnv::new(cfg.clone())?)),
            EnvSpec::Chain(cfg) => Ok(Box::new(HazardChainEnv::new(cfg.clone())?)),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvSpec::Point(cfg) => cfg.obs_dim(),
            EnvSpec::Chain(cfg) => cfg.length,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            EnvSpec::Point(_) => ActionSpace::Continuous { dim: 2 },
            EnvSpec::Chain(_) => ActionSpace::Discrete { n: 2 },
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvSpec::Point(cfg) => cfg.horizon,
            EnvSpec::Chain(cfg) => cfg.horizon,
        }
    }
}

pub(crate) fn usage_if_needs_reset(needs_reset: bool) -> Result<()> {
    if needs_reset {
        return Err(Error::Usage(
            "step called on a finished episode; reset first".into(),
        ));
    }
    Ok(())
}
