//! Minimal feed-forward network stack with analytic backprop.
//!
//! Policies and value heads are plain MLPs over `f64`. The forward pass
//! caches, per layer, the bias-augmented input activation and the
//! pre-activation output; the backward pass returns exact gradients plus
//! the per-layer `(a, delta)` pairs that K-FAC consumes.
//!
//! Biases use homogeneous coordinates: a constant 1 is appended to each
//! layer input, so the bias acts as one more weight column and each layer
//! has a single Kronecker factor pair.

mod backward;
mod dist;

pub use backward::{backward_from_output, backward_log_prob, LayerStats};
pub use dist::{kl, Action, Dist};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Elementwise activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(&self, s: &DVector<f64>) -> DVector<f64> {
        match self {
            Activation::Relu => s.map(|v| v.max(0.0)),
            Activation::Identity => s.clone(),
        }
    }

    /// Derivative evaluated at the pre-activation value.
    fn deriv(&self, s: f64) -> f64 {
        match self {
            Activation::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture of one affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Validates a full stack of layer specs: positive dims, chained shapes,
/// and identity activation restricted to the final layer.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, spec) in specs.iter().enumerate() {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::Config(format!(
                "layer {i} has zero dimension ({}x{})",
                spec.out_dim, spec.in_dim
            )));
        }
        if spec.activation == Activation::Identity && i != specs.len() - 1 {
            return Err(Error::Config(format!(
                "identity activation is only allowed on the final layer (layer {i})"
            )));
        }
        if i > 0 && specs[i - 1].out_dim != spec.in_dim {
            return Err(Error::Config(format!(
                "layer {i} in_dim {} does not match previous out_dim {}",
                spec.in_dim,
                specs[i - 1].out_dim
            )));
        }
    }
    Ok(())
}

/// Builds the standard spec stack: `obs_dim -> hidden... -> out_dim` with
/// ReLU on hidden layers and identity output.
pub fn mlp_specs(obs_dim: usize, hidden: &[usize], out_dim: usize) -> Vec<LayerSpec> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(obs_dim);
    dims.extend_from_slice(hidden);
    dims.push(out_dim);
    (0..dims.len() - 1)
        .map(|i| LayerSpec {
            in_dim: dims[i],
            out_dim: dims[i + 1],
            activation: if i == dims.len() - 2 {
                Activation::Identity
            } else {
                Activation::Relu
            },
        })
        .collect()
}

/// Parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `out_dim x in_dim`, row-major semantics (row = output unit).
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

/// Full parameter collection: affine layers plus, for Gaussian policies, a
/// state-independent log-std vector. Gradients and momentum buffers reuse
/// this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<LayerParams>,
    pub log_std: Option<DVector<f64>>,
}

impl ParamSet {
    /// All-zero parameters for the given architecture.
    pub fn zeros(specs: &[LayerSpec], log_std_dim: Option<usize>) -> Self {
        let layers = specs
            .iter()
            .map(|s| LayerParams {
                weight: DMatrix::zeros(s.out_dim, s.in_dim),
                bias: DVector::zeros(s.out_dim),
                activation: s.activation,
            })
            .collect();
        ParamSet {
            layers,
            log_std: log_std_dim.map(DVector::zeros),
        }
    }

    /// Zero-filled buffer with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        p.set_zero();
        p
    }

    pub fn set_zero(&mut self) {
        for layer in &mut self.layers {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        if let Some(ls) = &mut self.log_std {
            ls.fill(0.0);
        }
    }

    /// Orthogonal-scaled initialization: gain `sqrt(2)` on ReLU layers,
    /// `output_gain` on the final layer, zero biases. Gaussian policies get
    /// `log_std` filled with `log_std_init`.
    pub fn init<R: Rng>(
        specs: &[LayerSpec],
        log_std_dim: Option<usize>,
        output_gain: f64,
        log_std_init: f64,
        rng: &mut R,
    ) -> Self {
        let last = specs.len() - 1;
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let gain = if i == last {
                    output_gain
                } else {
                    std::f64::consts::SQRT_2
                };
                LayerParams {
                    weight: orthogonal(s.out_dim, s.in_dim, gain, rng),
                    bias: DVector::zeros(s.out_dim),
                    activation: s.activation,
                }
            })
            .collect();
        ParamSet {
            layers,
            log_std: log_std_dim.map(|d| DVector::from_element(d, log_std_init)),
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        for layer in &self.layers {
            n += layer.weight.len() + layer.bias.len();
        }
        if let Some(ls) = &self.log_std {
            n += ls.len();
        }
        n
    }

    pub fn shape_matches(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len()
            })
            && self.log_std.as_ref().map(|v| v.len()) == other.log_std.as_ref().map(|v| v.len())
    }

    /// Flattens into one vector: per layer the weight entries in row-major
    /// order followed by the bias, then the log-std block.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    out.push(layer.weight[(r, c)]);
                }
            }
            out.extend(layer.bias.iter());
        }
        if let Some(ls) = &self.log_std {
            out.extend(ls.iter());
        }
        DVector::from_vec(out)
    }

    /// Inverse of [`flatten`](Self::flatten), using `self` as the shape
    /// template. Round-trips bit-exactly.
    pub fn unflatten_like(&self, flat: &DVector<f64>) -> Result<ParamSet> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "flat vector has {} entries, parameter set has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut p = self.clone();
        let mut idx = 0;
        for layer in &mut p.layers {
            for r in 0..layer.weight.nrows() {
                for c in 0..layer.weight.ncols() {
                    layer.weight[(r, c)] = flat[idx];
                    idx += 1;
                }
            }
            for r in 0..layer.bias.len() {
                layer.bias[r] = flat[idx];
                idx += 1;
            }
        }
        if let Some(ls) = &mut p.log_std {
            for r in 0..ls.len() {
                ls[r] = flat[idx];
                idx += 1;
            }
        }
        Ok(p)
    }

    /// Flat inner product over every parameter, log-std block included.
    pub fn dot(&self, other: &ParamSet) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            acc += a.weight.dot(&b.weight);
            acc += a.bias.dot(&b.bias);
        }
        if let (Some(x), Some(y)) = (&self.log_std, &other.log_std) {
            acc += x.dot(y);
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += c * other`.
    pub fn axpy_mut(&mut self, c: f64, other: &ParamSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.zip_apply(&b.weight, |x, y| *x += c * y);
            a.bias.zip_apply(&b.bias, |x, y| *x += c * y);
        }
        if let (Some(x), Some(y)) = (&mut self.log_std, &other.log_std) {
            x.zip_apply(y, |a, b| *a += c * b);
        }
    }

    pub fn scale_mut(&mut self, c: f64) {
        for layer in &mut self.layers {
            layer.weight *= c;
            layer.bias *= c;
        }
        if let Some(ls) = &mut self.log_std {
            *ls *= c;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
            && self
                .log_std
                .as_ref()
                .map(|v| v.iter().all(|x| x.is_finite()))
                .unwrap_or(true)
    }

    pub fn obs_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.nrows()
    }

    /// Builds the output distribution implied by this parameter set:
    /// Gaussian when a log-std block is present, categorical otherwise.
    pub fn dist_from_output(&self, output: &DVector<f64>) -> Dist {
        match &self.log_std {
            Some(ls) => Dist::Gaussian {
                mean: output.clone(),
                log_std: ls.clone(),
            },
            None => Dist::Categorical {
                logits: output.clone(),
            },
        }
    }
}

/// Random matrix with orthonormal rows/columns scaled by `gain`.
fn orthogonal<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> DMatrix<f64> {
    let transpose = rows < cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let gauss = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix column signs so the factorization is unique.
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let q = if transpose { q.transpose() } else { q };
    q * gain
}

/// Per-layer activations captured by [`forward`] for later backprop and
/// K-FAC statistics.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Bias-augmented layer inputs `[a; 1]`, one per layer.
    pub inputs_aug: Vec<DVector<f64>>,
    /// Pre-activation outputs `s = W a + b`, one per layer.
    pub preacts: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

/// Runs the network on one observation, caching everything backprop needs.
pub fn forward(params: &ParamSet, obs: &DVector<f64>) -> Result<(DVector<f64>, ForwardCache)> {
    if obs.len() != params.obs_dim() {
        return Err(Error::Config(format!(
            "observation has {} entries, network expects {}",
            obs.len(),
            params.obs_dim()
        )));
    }
    let mut inputs_aug = Vec::with_capacity(params.layers.len());
    let mut preacts = Vec::with_capacity(params.layers.len());
    let mut a = obs.clone();
    for layer in &params.layers {
        let mut aug = DVector::zeros(a.len() + 1);
        aug.rows_mut(0, a.len()).copy_from(&a);
        aug[a.len()] = 1.0;
        inputs_aug.push(aug);

        let s = &layer.weight * &a + &layer.bias;
        let out = layer.activation.apply(&s);
        preacts.push(s);
        a = out;
    }
    let cache = ForwardCache {
        inputs_aug,
        preacts,
        output: a.clone(),
    };
    Ok((a, cache))
}
