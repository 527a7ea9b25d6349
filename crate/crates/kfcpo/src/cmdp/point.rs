//! Continuous 2-D point navigation with circular hazards.
//!
//! The agent is a damped point mass in the unit box. Reward is dense
//! progress toward the goal plus a bonus for entering the goal region,
//! after which the goal re-randomizes within the same episode. Each step
//! spent inside a hazard circle costs 1. Episodes end only by horizon.

use nalgebra::{DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{usage_if_needs_reset, ActionSpace, Env, StepResult};
use crate::error::{Error, Result};
use crate::nn::Action;

/// Hazard centers are confined to the middle of the box so that paths
/// between random spawn/goal pairs cross them often.
const HAZARD_BAND: f64 = 0.65;
/// Spawn and goal positions stay off the walls.
const PLACEMENT_BAND: f64 = 0.85;
/// Extra clearance between the spawn/goal and other objects.
const CLEARANCE: f64 = 0.05;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointConfig {
    pub hazards: usize,
    pub hazard_radius: f64,
    pub goal_radius: f64,
    pub horizon: usize,
    pub dt: f64,
    pub force_scale: f64,
    pub drag: f64,
    /// Gain on the dense progress term of the reward.
    pub shaping_scale: f64,
    /// Number of nearest hazards exposed in the observation.
    pub nearest_k: usize,
}

impl Default for PointConfig {
    fn default() -> Self {
        PointConfig {
            hazards: 4,
            hazard_radius: 0.15,
            goal_radius: 0.1,
            horizon: 400,
            dt: 0.05,
            force_scale: 1.0,
            drag: 2.0,
            shaping_scale: 1.0,
            nearest_k: 4,
        }
    }
}

impl PointConfig {
    pub fn obs_dim(&self) -> usize {
        // velocity + goal displacement + K hazard displacements
        4 + 2 * self.nearest_k
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hazard_radius > 0.0 && self.hazard_radius < 1.0) {
            return Err(Error::Config("env.hazard_radius must lie in (0, 1)".into()));
        }
        if !(self.goal_radius > 0.0 && self.goal_radius < 1.0) {
            return Err(Error::Config("env.goal_radius must lie in (0, 1)".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("env.horizon must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("env.dt must be positive".into()));
        }
        if !(self.force_scale > 0.0) {
            return Err(Error::Config("env.force_scale must be positive".into()));
        }
        if self.drag < 0.0 {
            return Err(Error::Config("env.drag must be nonnegative".into()));
        }
        if self.nearest_k == 0 {
            return Err(Error::Config("env.nearest_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PointHazardEnv {
    pub(crate) cfg: PointConfig,
    pub(crate) pos: Vector2<f64>,
    pub(crate) vel: Vector2<f64>,
    pub(crate) goal: Vector2<f64>,
    pub(crate) hazards: Vec<Vector2<f64>>,
    t: usize,
    rng: ChaCha8Rng,
    needs_reset: bool,
}

fn sample_box(rng: &mut ChaCha8Rng, half: f64) -> Vector2<f64> {
    Vector2::new(rng.gen_range(-half..half), rng.gen_range(-half..half))
}

impl PointHazardEnv {
    pub fn new(cfg: PointConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(PointHazardEnv {
            cfg,
            pos: Vector2::zeros(),
            vel: Vector2::zeros(),
            goal: Vector2::zeros(),
            hazards: Vec::new(),
            t: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            needs_reset: true,
        })
    }

    fn place(
        rng: &mut ChaCha8Rng,
        half: f64,
        accept: impl Fn(&Vector2<f64>) -> bool,
        what: &str,
    ) -> Result<Vector2<f64>> {
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let p = sample_box(rng, half);
            if accept(&p) {
                return Ok(p);
            }
        }
        Err(Error::Numeric(format!(
            "could not place {what} after {MAX_PLACEMENT_ATTEMPTS} attempts; geometry too crowded"
        )))
    }

    fn sample_goal(&mut self, away_from_agent: bool) -> Result<Vector2<f64>> {
        let cfg = &self.cfg;
        let hazards = self.hazards.clone();
        let pos = self.pos;
        Self::place(
            &mut self.rng,
            PLACEMENT_BAND,
            |p| {
                let clear_of_hazards = hazards
                    .iter()
                    .all(|h| (p - h).norm() > cfg.hazard_radius + cfg.goal_radius);
                let clear_of_agent =
                    !away_from_agent || (p - pos).norm() > cfg.goal_radius + CLEARANCE;
                clear_of_hazards && clear_of_agent
            },
            "goal",
        )
    }

    fn in_hazard(&self, p: &Vector2<f64>) -> bool {
        self.hazards
            .iter()
            .any(|h| (p - h).norm() < self.cfg.hazard_radius)
    }

    fn observation(&self) -> DVector<f64> {
        let mut obs = DVector::zeros(self.cfg.obs_dim());
        obs[0] = self.vel.x;
        obs[1] = self.vel.y;
        obs[2] = self.goal.x - self.pos.x;
        obs[3] = self.goal.y - self.pos.y;
        // K nearest hazards, closest first; missing slots read as far away.
        let mut by_dist: Vec<&Vector2<f64>> = self.hazards.iter().collect();
        by_dist.sort_by(|a, b| {
            let da = (*a - self.pos).norm_squared();
            let db = (*b - self.pos).norm_squared();
            da.partial_cmp(&db).unwrap()
        });
        for k in 0..self.cfg.nearest_k {
            let (dx, dy) = match by_dist.get(k) {
                Some(h) => (h.x - self.pos.x, h.y - self.pos.y),
                None => (2.0, 2.0),
            };
            obs[4 + 2 * k] = dx;
            obs[5 + 2 * k] = dy;
        }
        obs
    }
}

impl Env for PointHazardEnv {
    fn obs_dim(&self) -> usize {
        self.cfg.obs_dim()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous { dim: 2 }
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, seed: u64) -> Result<DVector<f64>> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = self.cfg.clone();
        self.hazards.clear();
        for _ in 0..cfg.hazards {
            let existing = self.hazards.clone();
            let h = Self::place(
                &mut self.rng,
                HAZARD_BAND,
                |p| existing.iter().all(|q| (p - q).norm() > cfg.hazard_radius),
                "hazard",
            )?;
            self.hazards.push(h);
        }
        self.goal = self.sample_goal(false)?;
        let hazards = self.hazards.clone();
        let goal = self.goal;
        self.pos = Self::place(
            &mut self.rng,
            PLACEMENT_BAND,
            |p| {
                let clear_of_hazards = hazards
                    .iter()
                    .all(|h| (p - h).norm() > cfg.hazard_radius + CLEARANCE);
                let clear_of_goal = (p - goal).norm() > cfg.goal_radius + CLEARANCE;
                clear_of_hazards && clear_of_goal
            },
            "agent spawn",
        )?;
        self.vel = Vector2::zeros();
        self.t = 0;
        self.needs_reset = false;
        Ok(self.observation())
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        usage_if_needs_reset(self.needs_reset)?;
        let a = match action {
            Action::Continuous(a) if a.len() == 2 => {
                Vector2::new(a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0))
            }
            Action::Continuous(a) => {
                return Err(Error::Dimension(format!(
                    "point env takes 2-dimensional actions, got {}",
                    a.len()
                )))
            }
            Action::Discrete(_) => {
                return Err(Error::Usage("point env takes continuous actions".into()))
            }
        };
        let cfg = self.cfg.clone();
        let prev_dist = (self.pos - self.goal).norm();
        let accel = a * cfg.force_scale - self.vel * cfg.drag;
        self.vel += accel * cfg.dt;
        self.pos += self.vel * cfg.dt;
        for axis in 0..2 {
            if self.pos[axis].abs() > 1.0 {
                self.pos[axis] = self.pos[axis].clamp(-1.0, 1.0);
                self.vel[axis] = 0.0;
            }
        }
        let new_dist = (self.pos - self.goal).norm();
        let mut reward = cfg.shaping_scale * (prev_dist - new_dist);
        if new_dist < cfg.goal_radius {
            reward += 1.0;
            self.goal = self.sample_goal(true)?;
        }
        let cost = if self.in_hazard(&self.pos) { 1.0 } else { 0.0 };
        self.t += 1;
        let truncated = self.t >= cfg.horizon;
        self.needs_reset = truncated;
        Ok(StepResult {
            obs: self.observation(),
            reward,
            cost,
            done: false,
            truncated,
        })
    }
}
