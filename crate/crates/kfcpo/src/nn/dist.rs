//! Policy output distributions: diagonal Gaussian and categorical.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// An action drawn from (or scored under) a policy distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Continuous(DVector<f64>),
    Discrete(usize),
}

/// Policy distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    /// Diagonal Gaussian with state-independent log-std.
    Gaussian {
        mean: DVector<f64>,
        log_std: DVector<f64>,
    },
    /// Discrete distribution given by unnormalized logits.
    Categorical { logits: DVector<f64> },
}

impl Dist {
    fn check_finite(&self) -> Result<()> {
        let ok = match self {
            Dist::Gaussian { mean, log_std } => {
                mean.iter().all(|v| v.is_finite()) && log_std.iter().all(|v| v.is_finite())
            }
            Dist::Categorical { logits } => logits.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite distribution parameters".into()))
        }
    }

    /// Log-density (Gaussian) or log-mass (categorical) of `action`.
    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        self.check_finite()?;
        match (self, action) {
            (Dist::Gaussian { mean, log_std }, Action::Continuous(x)) => {
                if x.len() != mean.len() {
                    return Err(Error::Dimension(format!(
                        "action has {} dims, distribution has {}",
                        x.len(),
                        mean.len()
                    )));
                }
                let mut lp = 0.0;
                for i in 0..mean.len() {
                    let z = (x[i] - mean[i]) / log_std[i].exp();
                    lp += -0.5 * z * z - log_std[i] - 0.5 * LN_2PI;
                }
                Ok(lp)
            }
            (Dist::Categorical { logits }, Action::Discrete(idx)) => {
                if *idx >= logits.len() {
                    return Err(Error::Usage(format!(
                        "action index {idx} out of range for {} categories",
                        logits.len()
                    )));
                }
                Ok(log_softmax(logits)[*idx])
            }
            _ => Err(Error::Usage(
                "action kind does not match distribution family".into(),
            )),
        }
    }

    /// Samples an action; Gaussian samples are not clamped here.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Action {
        match self {
            Dist::Gaussian { mean, log_std } => {
                let x = DVector::from_fn(mean.len(), |i, _| {
                    mean[i] + log_std[i].exp() * rng.sample::<f64, _>(StandardNormal)
                });
                Action::Continuous(x)
            }
            Dist::Categorical { logits } => {
                let p = softmax(logits);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(p.len() - 1)
            }
        }
    }

    /// Deterministic action: the mean (Gaussian) or argmax (categorical).
    pub fn mode(&self) -> Action {
        match self {
            Dist::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
            Dist::Categorical { logits } => {
                let mut best = 0;
                for i in 1..logits.len() {
                    if logits[i] > logits[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
        }
    }
}

/// Closed-form `KL(old || new)` for matching families.
pub fn kl(old: &Dist, new: &Dist) -> Result<f64> {
    old.check_finite()?;
    new.check_finite()?;
    match (old, new) {
        (
            Dist::Gaussian {
                mean: m1,
                log_std: s1,
            },
            Dist::Gaussian {
                mean: m2,
                log_std: s2,
            },
        ) => {
            if m1.len() != m2.len() {
                return Err(Error::Usage(format!(
                    "Gaussian dims differ: {} vs {}",
                    m1.len(),
                    m2.len()
                )));
            }
            let mut total = 0.0;
            for i in 0..m1.len() {
                let var1 = (2.0 * s1[i]).exp();
                let var2 = (2.0 * s2[i]).exp();
                let dm = m1[i] - m2[i];
                total += s2[i] - s1[i] + (var1 + dm * dm) / (2.0 * var2) - 0.5;
            }
            Ok(total)
        }
        (Dist::Categorical { logits: l1 }, Dist::Categorical { logits: l2 }) => {
            if l1.len() != l2.len() {
                return Err(Error::Usage(format!(
                    "categorical sizes differ: {} vs {}",
                    l1.len(),
                    l2.len()
                )));
            }
            let lp = log_softmax(l1);
            let lq = log_softmax(l2);
            let mut total = 0.0;
            for i in 0..l1.len() {
                let p = lp[i].exp();
                if p > 0.0 {
                    total += p * (lp[i] - lq[i]);
                }
            }
            Ok(total)
        }
        _ => Err(Error::Usage("KL between mismatched families".into())),
    }
}

pub(crate) fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let m = logits.max();
    let exps = logits.map(|v| (v - m).exp());
    let z = exps.sum();
    exps / z
}

pub(crate) fn log_softmax(logits: &DVector<f64>) -> DVector<f64> {
    let m = logits.max();
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    let lz = m + z.ln();
    logits.map(|v| v - lz)
}
