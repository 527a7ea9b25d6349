//! Margin-aware blending of reward and cost natural gradients.
//!
//! The blending weight on the cost gradient follows a sigmoid of the gap
//! between the measured episodic cost and the center of the safety margin;
//! when the two gradients conflict (negative inner product), the cost
//! gradient is first projected onto the orthogonal complement of the reward
//! gradient so the reward direction is never actively reversed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Clamp for the sigmoid exponent; exp(±60) is far beyond saturation.
const SIGMOID_CLAMP: f64 = 60.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarginConfig {
    /// Episodic cost limit `C`.
    pub cost_limit: f64,
    /// Margin center as a fraction of the limit; the sigmoid is centered at
    /// `margin_coeff * cost_limit`.
    pub margin_coeff: f64,
    /// Sigmoid steepness `k`, in inverse cost units.
    pub steepness: f64,
    /// Denominator guard for the conflict projection.
    pub projection_eps: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            cost_limit: 25.0,
            margin_coeff: 0.8,
            steepness: 0.5,
            projection_eps: 1e-8,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cost_limit > 0.0 && self.cost_limit.is_finite()) {
            return Err(Error::Config("margin.cost_limit must be positive".into()));
        }
        if !(self.margin_coeff > 0.0 && self.margin_coeff < 1.0) {
            return Err(Error::Config(
                "margin.margin_coeff must lie strictly inside (0, 1)".into(),
            ));
        }
        if !(self.steepness > 0.0 && self.steepness.is_finite()) {
            return Err(Error::Config("margin.steepness must be positive".into()));
        }
        if !(self.projection_eps > 0.0) {
            return Err(Error::Config(
                "margin.projection_eps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Center of the safety margin.
    pub fn center(&self) -> f64 {
        self.margin_coeff * self.cost_limit
    }
}

/// Where the measured episodic cost sits relative to the margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zone {
    /// Below the margin center.
    Safe,
    /// Between the margin center and the limit (inclusive).
    Margin,
    /// Above the limit.
    Unsafe,
}

pub fn zone(c_ep: f64, cfg: &MarginConfig) -> Zone {
    if c_ep < cfg.center() {
        Zone::Safe
    } else if c_ep <= cfg.cost_limit {
        Zone::Margin
    } else {
        Zone::Unsafe
    }
}

/// Sigmoid blending weights: `w_c = sigma(k (c_ep - center))`, `w_r = 1 - w_c`.
pub fn blend_weights(c_ep: f64, cfg: &MarginConfig) -> (f64, f64) {
    let x = (cfg.steepness * (c_ep - cfg.center())).clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    let w_c = 1.0 / (1.0 + (-x).exp());
    (1.0 - w_c, w_c)
}

/// Removes the component of `g_c` along `g_r`:
/// `g_c - <g_c, g_r> / (||g_r||^2 + eps) * g_r`.
pub fn project_conflict(g_c: &ParamSet, g_r: &ParamSet, eps: f64) -> ParamSet {
    let coef = g_c.dot(g_r) / (g_r.dot(g_r) + eps);
    let mut out = g_c.clone();
    out.axpy_mut(-coef, g_r);
    out
}

/// Outcome of one blending decision.
#[derive(Debug, Clone)]
pub struct BlendDecision {
    pub w_r: f64,
    pub w_c: f64,
    pub conflict: bool,
    pub g_blend: ParamSet,
    pub zone: Zone,
}

/// Blends the two natural gradients. Aligned gradients (inner product > 0,
/// with ties treated as aligned since projection would be a no-op) are
/// combined directly; conflicting ones have the cost direction projected
/// first.
pub fn combine(
    g_r: &ParamSet,
    g_c: &ParamSet,
    c_ep: f64,
    cfg: &MarginConfig,
) -> Result<BlendDecision> {
    if !g_r.shape_matches(g_c) {
        return Err(Error::Dimension(
            "reward and cost gradients have different shapes".into(),
        ));
    }
    let inner = g_r.dot(g_c);
    if g_r.dot(g_r) == 0.0 && g_c.dot(g_c) == 0.0 {
        return Err(Error::DegenerateInput(
            "both gradients are zero; no update direction".into(),
        ));
    }
    let (w_r, w_c) = blend_weights(c_ep, cfg);
    let conflict = inner < 0.0;
    let mut g_blend = g_r.clone();
    g_blend.scale_mut(w_r);
    if conflict {
        let g_c_perp = project_conflict(g_c, g_r, cfg.projection_eps);
        g_blend.axpy_mut(w_c, &g_c_perp);
    } else {
        g_blend.axpy_mut(w_c, g_c);
    }
    Ok(BlendDecision {
        w_r,
        w_c,
        conflict,
        g_blend,
        zone: zone(c_ep, cfg),
    })
}
