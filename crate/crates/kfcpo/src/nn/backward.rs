//! Reverse-mode gradients for log-probabilities and raw network outputs.

use nalgebra::DVector;

use super::dist::{log_softmax, Action, Dist};
use super::{ForwardCache, ParamSet};
use crate::error::{Error, Result};

/// Per-layer quantities K-FAC accumulates: the bias-augmented input `a` and
/// the gradient `delta` of the objective w.r.t. the pre-activation output.
#[derive(Debug, Clone)]
pub struct LayerStats {
    pub input_aug: DVector<f64>,
    pub delta: DVector<f64>,
}

/// Gradient of `log_prob(dist, action)` w.r.t. the network output, plus the
/// log-std gradient for Gaussian policies.
fn output_grad_log_prob(
    dist: &Dist,
    action: &Action,
) -> Result<(DVector<f64>, Option<DVector<f64>>)> {
    match (dist, action) {
        (Dist::Gaussian { mean, log_std }, Action::Continuous(x)) => {
            if x.len() != mean.len() {
                return Err(Error::Dimension(format!(
                    "action has {} dims, distribution has {}",
                    x.len(),
                    mean.len()
                )));
            }
            let mut mean_grad = DVector::zeros(mean.len());
            let mut ls_grad = DVector::zeros(mean.len());
            for i in 0..mean.len() {
                let inv_var = (-2.0 * log_std[i]).exp();
                let diff = x[i] - mean[i];
                mean_grad[i] = diff * inv_var;
                ls_grad[i] = diff * diff * inv_var - 1.0;
            }
            Ok((mean_grad, Some(ls_grad)))
        }
        (Dist::Categorical { logits }, Action::Discrete(idx)) => {
            if *idx >= logits.len() {
                return Err(Error::Usage(format!(
                    "action index {idx} out of range for {} categories",
                    logits.len()
                )));
            }
            let mut g = log_softmax(logits).map(|v| -v.exp());
            g[*idx] += 1.0;
            Ok((g, None))
        }
        _ => Err(Error::Usage(
            "action kind does not match distribution family".into(),
        )),
    }
}

/// Backpropagates an output-space gradient through the cached forward pass.
///
/// Returns exact parameter gradients (log-std block absent) and the
/// per-layer `(a, delta)` stats. The weight gradient of every layer equals
/// `delta * a^T` with the bias handled as the augmented column.
pub fn backward_from_output(
    params: &ParamSet,
    cache: &ForwardCache,
    out_grad: &DVector<f64>,
) -> Result<(ParamSet, Vec<LayerStats>)> {
    let n_layers = params.layers.len();
    if cache.inputs_aug.len() != n_layers || cache.preacts.len() != n_layers {
        return Err(Error::Dimension(format!(
            "cache has {} layers, parameter set has {}",
            cache.inputs_aug.len(),
            n_layers
        )));
    }
    if out_grad.len() != params.out_dim() {
        return Err(Error::Dimension(format!(
            "output gradient has {} entries, network output has {}",
            out_grad.len(),
            params.out_dim()
        )));
    }

    let mut grads = params.zeros_like();
    grads.log_std = None;
    let mut stats_rev = Vec::with_capacity(n_layers);

    let mut g = out_grad.clone();
    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let s = &cache.preacts[l];
        if g.len() != s.len() || cache.inputs_aug[l].len() != layer.weight.ncols() + 1 {
            return Err(Error::Dimension(format!(
                "cache shapes do not match parameters at layer {l}"
            )));
        }
        let delta = DVector::from_fn(s.len(), |i, _| g[i] * layer.activation.deriv(s[i]));
        let a_unaug = cache.inputs_aug[l].rows(0, layer.weight.ncols());
        grads.layers[l].weight = &delta * a_unaug.transpose();
        grads.layers[l].bias = delta.clone();
        if l > 0 {
            g = layer.weight.transpose() * &delta;
        }
        stats_rev.push(LayerStats {
            input_aug: cache.inputs_aug[l].clone(),
            delta,
        });
    }
    stats_rev.reverse();
    Ok((grads, stats_rev))
}

/// Exact gradient of `log_prob(dist, action)` w.r.t. every parameter,
/// including the log-std block, plus per-layer K-FAC stats.
///
/// `cache` must come from [`super::forward`] on the same parameters and
/// observation that produced `dist`.
pub fn backward_log_prob(
    params: &ParamSet,
    cache: &ForwardCache,
    dist: &Dist,
    action: &Action,
) -> Result<(ParamSet, Vec<LayerStats>)> {
    let (out_grad, ls_grad) = output_grad_log_prob(dist, action)?;
    let (mut grads, stats) = backward_from_output(params, cache, &out_grad)?;
    grads.log_std = match (&params.log_std, ls_grad) {
        (Some(_), Some(g)) => Some(g),
        (None, None) => None,
        _ => {
            return Err(Error::Usage(
                "distribution family does not match parameter set".into(),
            ))
        }
    };
    Ok((grads, stats))
}
