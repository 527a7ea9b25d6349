//! Discrete hazard chain: states 0..L-1 on a line, spawn at 0, goal at the
//! far end, a band of hazard states in between. Small enough that values
//! and costs have closed dynamic-programming forms, which the tests use as
//! oracles.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{usage_if_needs_reset, ActionSpace, Env, StepResult};
use crate::error::{Error, Result};
use crate::nn::Action;

pub const STEP_PENALTY: f64 = -0.01;
pub const GOAL_REWARD: f64 = 1.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Number of states; the goal sits at `length - 1`.
    pub length: usize,
    pub hazard_states: Vec<usize>,
    /// Probability that an action is flipped.
    pub slip: f64,
    pub horizon: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            length: 12,
            hazard_states: vec![4, 5, 6],
            slip: 0.1,
            horizon: 100,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Config("env.length must be at least 2".into()));
        }
        let goal = self.length - 1;
        for &h in &self.hazard_states {
            if h >= self.length {
                return Err(Error::Config(format!(
                    "hazard state {h} outside chain of length {}",
                    self.length
                )));
            }
            if h == goal {
                return Err(Error::Config("hazard states must not include the goal".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(Error::Config("env.slip must lie in [0, 1]".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("env.horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HazardChainEnv {
    cfg: ChainConfig,
    pos: usize,
    t: usize,
    rng: ChaCha8Rng,
    needs_reset: bool,
}

impl HazardChainEnv {
    pub fn new(cfg: ChainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(HazardChainEnv {
            cfg,
            pos: 0,
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            needs_reset: true,
        })
    }

    pub fn goal(&self) -> usize {
        self.cfg.length - 1
    }

    fn one_hot(&self) -> DVector<f64> {
        let mut obs = DVector::zeros(self.cfg.length);
        obs[self.pos] = 1.0;
        obs
    }
}

impl Env for HazardChainEnv {
    fn obs_dim(&self) -> usize {
        self.cfg.length
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: 2 }
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> Result<DVector<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = 0;
        self.t = 0;
        self.needs_reset = false;
        Ok(self.one_hot())
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        usage_if_needs_reset(self.needs_reset)?;
        let mut go_right = match action {
            Action::Discrete(0) => false,
            Action::Discrete(1) => true,
            Action::Discrete(n) => {
                return Err(Error::Usage(format!(
                    "chain action {n} outside {{0 (left), 1 (right)}}"
                )))
            }
            Action::Continuous(_) => {
                return Err(Error::Usage("chain env takes discrete actions".into()))
            }
        };
        if self.cfg.slip > 0.0 && self.rng.gen::<f64>() < self.cfg.slip {
            go_right = !go_right;
        }
        self.pos = if go_right {
            (self.pos + 1).min(self.goal())
        } else {
            self.pos.saturating_sub(1)
        };
        self.t += 1;
        let done = self.pos == self.goal();
        let truncated = !done && self.t >= self.cfg.horizon;
        let reward = STEP_PENALTY + if done { GOAL_REWARD } else { 0.0 };
        let cost = if self.cfg.hazard_states.contains(&self.pos) {
            1.0
        } else {
            0.0
        };
        self.needs_reset = done || truncated;
        Ok(StepResult {
            obs: self.one_hot(),
            reward,
            cost,
            done,
            truncated,
        })
    }
}
