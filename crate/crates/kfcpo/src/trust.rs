//! Trust-region step sizing, momentum, and the minibatch KL rollback test.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kfac::CurvatureSet;
use crate::nn::{forward, kl, ParamSet};

/// Direction of the rollback KL. `OldNew` treats the pre-update policy as
/// the reference distribution (TRPO convention).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KlDirection {
    OldNew,
    NewOld,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrustConfig {
    /// KL budget targeted by the scaling factor.
    pub kl_target: f64,
    /// Hard rollback bound on the measured minibatch KL.
    pub kl_rollback: f64,
    pub nu_max: f64,
    /// Momentum coefficient beta.
    pub momentum: f64,
    pub learning_rate: f64,
    pub kl_direction: KlDirection,
}

impl Default for TrustConfig {
    fn default() -> Self {
        TrustConfig {
            kl_target: 0.005,
            kl_rollback: 0.01,
            nu_max: 1.0,
            momentum: 0.9,
            learning_rate: 0.1,
            kl_direction: KlDirection::OldNew,
        }
    }
}

impl TrustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kl_target > 0.0 && self.kl_target.is_finite()) {
            return Err(Error::Config("trust.kl_target must be positive".into()));
        }
        if !(self.kl_rollback > 0.0 && self.kl_rollback.is_finite()) {
            return Err(Error::Config("trust.kl_rollback must be positive".into()));
        }
        if self.kl_target > self.kl_rollback {
            return Err(Error::Config(
                "trust.kl_target must not exceed trust.kl_rollback".into(),
            ));
        }
        if !(self.nu_max > 0.0) {
            return Err(Error::Config("trust.nu_max must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("trust.momentum must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "trust.learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Effective learning rate `lr * (1 - beta)`.
    pub fn alpha(&self) -> f64 {
        self.learning_rate * (1.0 - self.momentum)
    }
}

/// Momentum buffer plus the previous buffer kept for rollback.
#[derive(Debug, Clone)]
pub struct MomentumState {
    pub m: ParamSet,
    pub prev_m: ParamSet,
}

impl MomentumState {
    pub fn new(shape: &ParamSet) -> Self {
        MomentumState {
            m: shape.zeros_like(),
            prev_m: shape.zeros_like(),
        }
    }

    /// Restores the buffer to its pre-step contents.
    pub fn rollback(&mut self) {
        self.m = self.prev_m.clone();
    }
}

/// Quadratic-form floor below which the curvature is considered
/// uninformative and the cap is returned instead.
const QF_FLOOR: f64 = 1e-12;

/// Minibatch-adjusted trust-region scale
/// `nu = min(nu_max, (|B|/N) sqrt(2 delta / (g^T F g)))`.
pub fn scale_factor(
    g: &ParamSet,
    curvature: &CurvatureSet,
    delta: f64,
    batch_size: usize,
    epoch_size: usize,
    nu_max: f64,
) -> Result<f64> {
    if batch_size == 0 || batch_size > epoch_size {
        return Err(Error::Usage(format!(
            "minibatch size {batch_size} must lie in 1..={epoch_size}"
        )));
    }
    let qf = curvature.quadratic_form(g)?;
    if !qf.is_finite() || qf <= QF_FLOOR {
        eprintln!(
            "warning: curvature quadratic form {qf:.3e} at or below floor; using nu_max"
        );
        return Ok(nu_max);
    }
    let ratio = batch_size as f64 / epoch_size as f64;
    Ok(nu_max.min(ratio * (2.0 * delta / qf).sqrt()))
}

/// Momentum update `m <- beta m + nu g`; returns the parameter step
/// `-alpha m` with `alpha = lr (1 - beta)`. The previous buffer is kept in
/// the state for rollback.
pub fn momentum_step(
    state: &mut MomentumState,
    g: &ParamSet,
    nu: f64,
    cfg: &TrustConfig,
) -> ParamSet {
    state.prev_m = state.m.clone();
    state.m.scale_mut(cfg.momentum);
    state.m.axpy_mut(nu, g);
    let mut delta_theta = state.m.clone();
    delta_theta.scale_mut(-cfg.alpha());
    delta_theta
}

/// Result of the rollback test.
#[derive(Debug, Clone, Copy)]
pub struct KlCheck {
    pub rollback: bool,
    /// Mean KL over the minibatch; NaN when the evaluation blew up.
    pub kl_mean: f64,
}

/// Mean policy KL over a set of observations.
pub fn mean_kl(
    old: &ParamSet,
    candidate: &ParamSet,
    obs: &[DVector<f64>],
    direction: KlDirection,
) -> Result<f64> {
    if obs.is_empty() {
        return Err(Error::DegenerateInput(
            "KL check requires at least one observation".into(),
        ));
    }
    let mut total = 0.0;
    for o in obs {
        let (out_old, _) = forward(old, o)?;
        let (out_new, _) = forward(candidate, o)?;
        let d_old = old.dist_from_output(&out_old);
        let d_new = candidate.dist_from_output(&out_new);
        total += match direction {
            KlDirection::OldNew => kl(&d_old, &d_new)?,
            KlDirection::NewOld => kl(&d_new, &d_old)?,
        };
    }
    Ok(total / obs.len() as f64)
}

/// Compares the mean minibatch KL against the rollback bound. A KL that
/// cannot be evaluated (non-finite parameters or outputs) counts as a
/// trust-region violation. The parameter check matters on its own: ReLU
/// clamping can hide a NaN weight from the forward pass.
pub fn rollback_check(
    old: &ParamSet,
    candidate: &ParamSet,
    obs: &[DVector<f64>],
    eps_kl: f64,
    direction: KlDirection,
) -> Result<KlCheck> {
    if !candidate.is_finite() {
        return Ok(KlCheck {
            rollback: true,
            kl_mean: f64::NAN,
        });
    }
    match mean_kl(old, candidate, obs, direction) {
        Ok(kl_mean) if kl_mean.is_finite() => Ok(KlCheck {
            rollback: kl_mean > eps_kl,
            kl_mean,
        }),
        Ok(_) | Err(Error::Numeric(_)) => Ok(KlCheck {
            rollback: true,
            kl_mean: f64::NAN,
        }),
        Err(e) => Err(e),
    }
}
