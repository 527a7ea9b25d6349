//! Checkpoint files: JSON snapshots of everything needed to resume a run.
//!
//! Curvature statistics are deliberately not stored; they are a running
//! estimate that the resumed process rebuilds within one refresh interval.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ParamSet};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub policy_specs: Vec<LayerSpec>,
    pub policy_log_std_dim: Option<usize>,
    pub critic_specs: Vec<LayerSpec>,
    pub policy_params: Vec<f64>,
    pub critic_r_params: Vec<f64>,
    pub critic_c_params: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {})",
                ckpt.version, CHECKPOINT_VERSION
            )));
        }
        Ok(ckpt)
    }
}

/// Rebuilds a parameter set from its flattened form and architecture.
pub fn params_from_flat(
    specs: &[LayerSpec],
    log_std_dim: Option<usize>,
    flat: &[f64],
) -> Result<ParamSet> {
    let template = ParamSet::zeros(specs, log_std_dim);
    template.unflatten_like(&nalgebra::DVector::from_vec(flat.to_vec()))
}
