//! Kronecker-factored curvature for the policy network.
//!
//! Each affine layer keeps a factor pair `(A, G)`: `A` is the covariance of
//! bias-augmented layer inputs, `G` the covariance of pre-activation output
//! gradients, both tracked with exponential moving averages. The layer's
//! Fisher block is approximated as `A ⊗ G`, inverted factor-by-factor
//! through damped eigendecompositions.
//!
//! The log-std block of Gaussian policies is not Kronecker-factored; it is
//! treated as an identity-preconditioned block in both the inverse and the
//! quadratic form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nn::{LayerStats, ParamSet};

/// Which objective's curvature this set tracks. Both sets see the same
/// statistics; they keep independent EMAs and refresh schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveTag {
    Reward,
    Cost,
}

/// Eigendecomposition of one symmetric factor.
#[derive(Debug, Clone)]
pub struct EigPair {
    /// Orthogonal matrix of eigenvectors (columns).
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

/// Factor statistics and decompositions for one layer.
#[derive(Debug, Clone)]
pub struct KfacLayerState {
    /// Input covariance, `(in_dim+1) x (in_dim+1)` (bias-augmented).
    pub a_cov: DMatrix<f64>,
    /// Output-gradient covariance, `out_dim x out_dim`.
    pub g_cov: DMatrix<f64>,
    pub eig_a: Option<EigPair>,
    pub eig_g: Option<EigPair>,
}

/// Batch means of the factor statistics, shared between the reward and cost
/// curvature sets so the quadratic work is done once.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    /// Per layer: `(mean a a^T, mean delta delta^T)`.
    pub layers: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl BatchMoments {
    /// Averages outer products over a sample-major batch of per-layer stats.
    pub fn from_samples(samples: &[Vec<LayerStats>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::DegenerateInput("empty statistics batch".into()))?;
        let n_layers = first.len();
        let mut layers: Vec<(DMatrix<f64>, DMatrix<f64>)> = first
            .iter()
            .map(|st| {
                (
                    DMatrix::zeros(st.input_aug.len(), st.input_aug.len()),
                    DMatrix::zeros(st.delta.len(), st.delta.len()),
                )
            })
            .collect();
        for sample in samples {
            if sample.len() != n_layers {
                return Err(Error::Dimension(
                    "inconsistent layer count in statistics batch".into(),
                ));
            }
            for (l, st) in sample.iter().enumerate() {
                if st.input_aug.len() != layers[l].0.nrows() || st.delta.len() != layers[l].1.nrows()
                {
                    return Err(Error::Dimension(format!(
                        "statistics shape mismatch at layer {l}"
                    )));
                }
                layers[l].0.ger(1.0, &st.input_aug, &st.input_aug, 1.0);
                layers[l].1.ger(1.0, &st.delta, &st.delta, 1.0);
            }
        }
        let inv_n = 1.0 / samples.len() as f64;
        for (a, g) in &mut layers {
            *a *= inv_n;
            *g *= inv_n;
        }
        Ok(BatchMoments { layers })
    }
}

/// Curvature state for a whole policy: one factor pair per affine layer.
#[derive(Debug, Clone)]
pub struct CurvatureSet {
    pub layers: Vec<KfacLayerState>,
    pub objective: ObjectiveTag,
    /// EMA weight on the new batch.
    pub decay: f64,
    /// Tikhonov shift applied to eigenvalues during inversion.
    pub damping: f64,
    /// Number of statistics updates applied so far.
    pub stats_step: u64,
    /// True whenever statistics changed since the last eigendecomposition.
    pub eig_stale: bool,
}

impl CurvatureSet {
    /// Zero-initialized factors sized to match `policy`'s layers.
    pub fn new(policy: &ParamSet, objective: ObjectiveTag, decay: f64, damping: f64) -> Self {
        let layers = policy
            .layers
            .iter()
            .map(|l| KfacLayerState {
                a_cov: DMatrix::zeros(l.weight.ncols() + 1, l.weight.ncols() + 1),
                g_cov: DMatrix::zeros(l.weight.nrows(), l.weight.nrows()),
                eig_a: None,
                eig_g: None,
            })
            .collect();
        CurvatureSet {
            layers,
            objective,
            decay,
            damping,
            stats_step: 0,
            eig_stale: false,
        }
    }

    fn check_layer_count(&self, n: usize, what: &str) -> Result<()> {
        if n != self.layers.len() {
            return Err(Error::Dimension(format!(
                "{what} has {n} layers, curvature set has {}",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// EMA update of every factor from a batch of per-sample layer stats.
    pub fn update_stats(&mut self, samples: &[Vec<LayerStats>]) -> Result<()> {
        let moments = BatchMoments::from_samples(samples)?;
        self.update_from_moments(&moments)
    }

    /// EMA update from precomputed batch moments:
    /// `A <- (1-eps) A + eps A_new`, likewise for `G`.
    pub fn update_from_moments(&mut self, moments: &BatchMoments) -> Result<()> {
        self.check_layer_count(moments.layers.len(), "moments")?;
        for (state, (a_new, g_new)) in self.layers.iter_mut().zip(&moments.layers) {
            if a_new.nrows() != state.a_cov.nrows() || g_new.nrows() != state.g_cov.nrows() {
                return Err(Error::Dimension(
                    "moment shapes do not match curvature factors".into(),
                ));
            }
            state.a_cov = &state.a_cov * (1.0 - self.decay) + a_new * self.decay;
            state.g_cov = &state.g_cov * (1.0 - self.decay) + g_new * self.decay;
        }
        self.stats_step += 1;
        self.eig_stale = true;
        Ok(())
    }

    /// Recomputes the symmetric eigendecomposition of every factor.
    pub fn refresh_eig(&mut self) -> Result<()> {
        if self.stats_step == 0 {
            return Err(Error::Usage(
                "refresh_eig called before any statistics update".into(),
            ));
        }
        for (l, state) in self.layers.iter_mut().enumerate() {
            state.eig_a = Some(sym_eig(&state.a_cov, l, "A")?);
            state.eig_g = Some(sym_eig(&state.g_cov, l, "G")?);
        }
        self.eig_stale = false;
        Ok(())
    }

    pub fn has_eigs(&self) -> bool {
        self.layers
            .iter()
            .all(|s| s.eig_a.is_some() && s.eig_g.is_some())
    }

    /// Applies the damped inverse Kronecker approximation layer by layer:
    /// for each weight-gradient matrix `V` (bias column appended),
    /// `Q_G D_G Q_G^T V Q_A D_A Q_A^T` with `D` the elementwise
    /// `1/(lambda + damping)`. Equal to the dense
    /// `(A+dI)^{-1} ⊗ (G+dI)^{-1}` applied to the column-major `vec(V)`.
    /// The log-std block passes through unchanged.
    ///
    /// Decompositions may lag the statistics by up to the refresh interval;
    /// only a missing decomposition is an error.
    pub fn apply_inverse(&self, grads: &ParamSet) -> Result<ParamSet> {
        self.check_layer_count(grads.layers.len(), "gradient")?;
        let mut out = grads.clone();
        for (l, (state, layer)) in self.layers.iter().zip(&mut out.layers).enumerate() {
            let (eig_a, eig_g) = match (&state.eig_a, &state.eig_g) {
                (Some(a), Some(g)) => (a, g),
                _ => {
                    return Err(Error::StaleState(format!(
                        "layer {l} has no eigendecomposition; refresh before applying inverses"
                    )))
                }
            };
            let v = augment(layer);
            let mut t = eig_g.vectors.transpose() * v * &eig_a.vectors;
            for i in 0..t.nrows() {
                for j in 0..t.ncols() {
                    t[(i, j)] /= (eig_g.values[i] + self.damping) * (eig_a.values[j] + self.damping);
                }
            }
            let nat = &eig_g.vectors * t * eig_a.vectors.transpose();
            split_into(layer, &nat);
        }
        Ok(out)
    }

    /// Fisher quadratic form `sum_l vec(V_l)^T (A_l ⊗ G_l) vec(V_l)` using
    /// the undamped factors, computed per layer as `sum((G V A) .* V)`,
    /// plus the squared norm of the log-std block (identity Fisher).
    pub fn quadratic_form(&self, v: &ParamSet) -> Result<f64> {
        self.check_layer_count(v.layers.len(), "vector")?;
        let mut total = 0.0;
        for (state, layer) in self.layers.iter().zip(&v.layers) {
            let m = augment(layer);
            let gva = &state.g_cov * &m * &state.a_cov;
            total += gva.dot(&m);
        }
        if let Some(ls) = &v.log_std {
            total += ls.dot(ls);
        }
        Ok(total)
    }
}

/// Weight matrix with the bias appended as the final column.
fn augment(layer: &crate::nn::LayerParams) -> DMatrix<f64> {
    let (rows, cols) = layer.weight.shape();
    let mut v = DMatrix::zeros(rows, cols + 1);
    v.columns_mut(0, cols).copy_from(&layer.weight);
    v.column_mut(cols).copy_from(&layer.bias);
    v
}

/// Writes an augmented matrix back into weight and bias.
fn split_into(layer: &mut crate::nn::LayerParams, aug: &DMatrix<f64>) {
    let (rows, cols) = layer.weight.shape();
    layer.weight.copy_from(&aug.columns(0, cols));
    layer.bias.copy_from(&aug.column(cols));
    let _ = rows;
}

fn sym_eig(m: &DMatrix<f64>, layer: usize, which: &str) -> Result<EigPair> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite entries in factor {which} of layer {layer}"
        )));
    }
    let eig = m.clone().symmetric_eigen();
    Ok(EigPair {
        vectors: eig.eigenvectors,
        values: eig.eigenvalues,
    })
}
