//! Shared helpers for unit tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{LayerSpec, ParamSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative L2 error of `got` against `want`.
pub fn rel_err(got: &DVector<f64>, want: &DVector<f64>) -> f64 {
    (got - want).norm() / want.norm().max(1e-12)
}

pub fn rel_err_scalar(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-12)
}

/// Parameters with N(0, 1/sqrt(in_dim)) weights and small random biases;
/// log-std entries in [-1, 0.5].
pub fn random_params<R: Rng>(
    specs: &[LayerSpec],
    log_std_dim: Option<usize>,
    rng: &mut R,
) -> ParamSet {
    let mut p = ParamSet::zeros(specs, log_std_dim);
    for (layer, spec) in p.layers.iter_mut().zip(specs) {
        let scale = 1.0 / (spec.in_dim as f64).sqrt();
        layer.weight =
            DMatrix::from_fn(spec.out_dim, spec.in_dim, |_, _| rng.gen_range(-1.0..1.0) * scale);
        layer.bias = DVector::from_fn(spec.out_dim, |_, _| rng.gen_range(-0.1..0.1));
    }
    if let Some(ls) = &mut p.log_std {
        *ls = DVector::from_fn(ls.len(), |_, _| rng.gen_range(-1.0..0.5));
    }
    p
}

pub fn random_vec<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}
