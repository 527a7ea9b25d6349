//! Flat `key = value` training configuration with dotted sections.
//!
//! Lines are `#` comments or single assignments. Every key is checked
//! against the reference list for the selected environment; unknown or
//! inapplicable keys are rejected by name so typos surface immediately.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cmdp::{ChainConfig, EnvSpec, PointConfig};
use crate::error::{Error, Result};
use crate::safegrad::MarginConfig;
use crate::trust::{KlDirection, TrustConfig};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KfacConfig {
    /// EMA weight on the new batch.
    pub decay: f64,
    pub damping: f64,
    /// Update factor statistics every this many minibatch steps (T_s).
    pub stats_every: usize,
    /// Refresh eigendecompositions every this many minibatch steps (T_f).
    pub refresh_every: usize,
}

impl Default for KfacConfig {
    fn default() -> Self {
        KfacConfig {
            decay: 0.95,
            damping: 1e-3,
            stats_every: 1,
            refresh_every: 10,
        }
    }
}

impl KfacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("kfac.decay must lie in (0, 1]".into()));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::Config("kfac.damping must be nonnegative".into()));
        }
        if self.stats_every == 0 {
            return Err(Error::Config("kfac.stats_every must be at least 1".into()));
        }
        if self.refresh_every < self.stats_every {
            return Err(Error::Config(
                "kfac.refresh_every must be at least kfac.stats_every".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub kfac: KfacConfig,
    pub trust: TrustConfig,
    pub margin: MarginConfig,
    /// When false the cost pathway is ignored entirely (pure reward
    /// natural-gradient ablation): w_r = 1, w_c = 0, no projection.
    pub margin_enabled: bool,
    pub steps_per_epoch: usize,
    pub workers: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub inner_passes: usize,
    pub critic_lr: f64,
    pub critic_iters: usize,
    pub critic_minibatch: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    /// When false the `seconds` metrics column is written as zero, making
    /// the CSV a pure function of (config, seed).
    pub timing: bool,
}

impl TrainConfig {
    /// Defaults for the named environment. Epoch geometry (N, B, K, epochs)
    /// is a desk-scale choice, not tied to any published experiment.
    pub fn defaults_for(env_name: &str) -> Result<TrainConfig> {
        let (env, minibatch) = match env_name {
            "point" => (EnvSpec::Point(PointConfig::default()), 800),
            "chain" => (EnvSpec::Chain(ChainConfig::default()), 500),
            other => {
                return Err(Error::Config(format!(
                    "env.name must be \"point\" or \"chain\", got \"{other}\""
                )))
            }
        };
        Ok(TrainConfig {
            env,
            hidden: vec![64, 64],
            log_std_init: -0.5,
            kfac: KfacConfig::default(),
            trust: TrustConfig::default(),
            margin: MarginConfig::default(),
            margin_enabled: true,
            steps_per_epoch: 4000,
            workers: 4,
            gamma: 0.99,
            lambda: 0.97,
            epochs: 250,
            minibatch,
            inner_passes: 4,
            critic_lr: 1e-3,
            critic_iters: 40,
            critic_minibatch: 256,
            seed: 0,
            out_dir: PathBuf::from("runs/kfcpo"),
            checkpoint_every: 10,
            timing: true,
        })
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)?;
        TrainConfig::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<TrainConfig> {
        let pairs = parse_pairs(text)?;
        let env_name = pairs
            .iter()
            .find(|(k, _)| k == "env.name")
            .map(|(_, v)| v.as_str())
            .unwrap_or("point");
        let mut cfg = TrainConfig::defaults_for(env_name)?;
        for (key, value) in &pairs {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env.name" => {} // consumed before defaults were built
            "env.horizon" => match &mut self.env {
                EnvSpec::Point(c) => c.horizon = parse_usize(key, value)?,
                EnvSpec::Chain(c) => c.horizon = parse_usize(key, value)?,
            },
            "env.hazards" => {
                point_env(&mut self.env, key)?.hazards = parse_usize(key, value)?
            }
            "env.hazard_radius" => {
                point_env(&mut self.env, key)?.hazard_radius = parse_f64(key, value)?
            }
            "env.goal_radius" => {
                point_env(&mut self.env, key)?.goal_radius = parse_f64(key, value)?
            }
            "env.dt" => point_env(&mut self.env, key)?.dt = parse_f64(key, value)?,
            "env.force_scale" => {
                point_env(&mut self.env, key)?.force_scale = parse_f64(key, value)?
            }
            "env.drag" => point_env(&mut self.env, key)?.drag = parse_f64(key, value)?,
            "env.shaping_scale" => {
                point_env(&mut self.env, key)?.shaping_scale = parse_f64(key, value)?
            }
            "env.nearest_k" => {
                point_env(&mut self.env, key)?.nearest_k = parse_usize(key, value)?
            }
            "env.length" => chain_env(&mut self.env, key)?.length = parse_usize(key, value)?,
            "env.hazard_states" => {
                chain_env(&mut self.env, key)?.hazard_states = parse_usize_list(key, value)?
            }
            "env.slip" => chain_env(&mut self.env, key)?.slip = parse_f64(key, value)?,
            "net.hidden" => self.hidden = parse_usize_list(key, value)?,
            "net.log_std_init" => self.log_std_init = parse_f64(key, value)?,
            "kfac.decay" => self.kfac.decay = parse_f64(key, value)?,
            "kfac.damping" => self.kfac.damping = parse_f64(key, value)?,
            "kfac.stats_every" => self.kfac.stats_every = parse_usize(key, value)?,
            "kfac.refresh_every" => self.kfac.refresh_every = parse_usize(key, value)?,
            "trust.kl_target" => self.trust.kl_target = parse_f64(key, value)?,
            "trust.kl_rollback" => self.trust.kl_rollback = parse_f64(key, value)?,
            "trust.nu_max" => self.trust.nu_max = parse_f64(key, value)?,
            "trust.momentum" => self.trust.momentum = parse_f64(key, value)?,
            "trust.learning_rate" => self.trust.learning_rate = parse_f64(key, value)?,
            "trust.kl_direction" => {
                self.trust.kl_direction = match value {
                    "old_new" => KlDirection::OldNew,
                    "new_old" => KlDirection::NewOld,
                    other => {
                        return Err(Error::Config(format!(
                            "trust.kl_direction must be old_new or new_old, got \"{other}\""
                        )))
                    }
                }
            }
            "margin.cost_limit" => self.margin.cost_limit = parse_f64(key, value)?,
            "margin.margin_coeff" => self.margin.margin_coeff = parse_f64(key, value)?,
            "margin.steepness" => self.margin.steepness = parse_f64(key, value)?,
            "margin.projection_eps" => self.margin.projection_eps = parse_f64(key, value)?,
            "margin.enabled" => self.margin_enabled = parse_bool(key, value)?,
            "rollout.steps_per_epoch" => self.steps_per_epoch = parse_usize(key, value)?,
            "rollout.workers" => self.workers = parse_usize(key, value)?,
            "rollout.gamma" => self.gamma = parse_f64(key, value)?,
            "rollout.lambda" => self.lambda = parse_f64(key, value)?,
            "train.epochs" => self.epochs = parse_usize(key, value)?,
            "train.minibatch" => self.minibatch = parse_usize(key, value)?,
            "train.inner_passes" => self.inner_passes = parse_usize(key, value)?,
            "train.critic_lr" => self.critic_lr = parse_f64(key, value)?,
            "train.critic_iters" => self.critic_iters = parse_usize(key, value)?,
            "train.critic_minibatch" => self.critic_minibatch = parse_usize(key, value)?,
            "train.seed" => self.seed = parse_u64(key, value)?,
            "train.out_dir" => self.out_dir = PathBuf::from(value),
            "train.checkpoint_every" => self.checkpoint_every = parse_usize(key, value)?,
            "train.timing" => self.timing = parse_bool(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key \"{other}\"")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match &self.env {
            EnvSpec::Point(c) => c.validate()?,
            EnvSpec::Chain(c) => c.validate()?,
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config(
                "net.hidden needs at least one positive layer width".into(),
            ));
        }
        self.kfac.validate()?;
        self.trust.validate()?;
        self.margin.validate()?;
        if self.minibatch == 0 || self.minibatch > self.steps_per_epoch {
            return Err(Error::Config(format!(
                "train.minibatch {} must lie in 1..=rollout.steps_per_epoch {}",
                self.minibatch, self.steps_per_epoch
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("rollout.workers must be at least 1".into()));
        }
        let horizon = self.env.horizon();
        if self.steps_per_epoch / self.workers < horizon {
            return Err(Error::Config(format!(
                "each of the {} workers collects {} steps, less than one horizon ({horizon})",
                self.workers,
                self.steps_per_epoch / self.workers
            )));
        }
        if self.inner_passes == 0 {
            return Err(Error::Config("train.inner_passes must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("rollout.gamma must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("rollout.lambda must lie in [0, 1]".into()));
        }
        if self.critic_minibatch == 0 {
            return Err(Error::Config(
                "train.critic_minibatch must be at least 1".into(),
            ));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config(
                "train.checkpoint_every must be at least 1".into(),
            ));
        }
        if !(self.critic_lr > 0.0) {
            return Err(Error::Config("train.critic_lr must be positive".into()));
        }
        if !(self.log_std_init.is_finite()) {
            return Err(Error::Config("net.log_std_init must be finite".into()));
        }
        Ok(())
    }

    /// Number of minibatch updates per inner pass (trailing partial dropped).
    pub fn minibatches_per_pass(&self) -> usize {
        self.steps_per_epoch / self.minibatch
    }
}

fn point_env<'a>(env: &'a mut EnvSpec, key: &str) -> Result<&'a mut PointConfig> {
    match env {
        EnvSpec::Point(c) => Ok(c),
        EnvSpec::Chain(_) => Err(Error::Config(format!(
            "config key \"{key}\" does not apply to env.name = chain"
        ))),
    }
}

fn chain_env<'a>(env: &'a mut EnvSpec, key: &str) -> Result<&'a mut ChainConfig> {
    match env {
        EnvSpec::Chain(c) => Ok(c),
        EnvSpec::Point(_) => Err(Error::Config(format!(
            "config key \"{key}\" does not apply to env.name = point"
        ))),
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {} is not a `key = value` assignment: \"{line}\"",
                lineno + 1
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {} has an empty key", lineno + 1)));
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!(
                "config key \"{key}\" assigned more than once"
            )));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key \"{key}\": \"{value}\" is not a number")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "key \"{key}\": \"{value}\" is not a nonnegative integer"
        ))
    })
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "key \"{key}\": \"{value}\" is not a nonnegative integer"
        ))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "key \"{key}\": \"{value}\" is not true/false"
        ))),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| parse_usize(key, part.trim()))
        .collect()
}
