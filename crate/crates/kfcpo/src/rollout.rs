//! On-policy collection and dual-signal advantage estimation.
//!
//! A batch is an exact number of steps gathered worker by worker; each
//! worker owns one environment instance and an RNG derived from the master
//! stream, so the merged batch is deterministic regardless of how the
//! workers would be scheduled. Episodes cut by the epoch boundary stay in
//! the batch for advantage estimation (with a bootstrapped tail) but are
//! excluded from the episodic cost statistic.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmdp::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{forward, Action, ParamSet};

/// How an episode span ended. Non-terminal endings carry the observation
/// of the state after the final transition, for critic bootstrapping.
#[derive(Debug, Clone)]
pub enum EpisodeEnd {
    /// Reached a terminal state; tail value is zero.
    Terminated,
    /// Cut by the environment horizon.
    Truncated(DVector<f64>),
    /// Cut by the end of the collection quota.
    EpochCut(DVector<f64>),
}

impl EpisodeEnd {
    /// Complete episodes (terminal or horizon-cut) count toward `c_ep`.
    pub fn is_complete(&self) -> bool {
        !matches!(self, EpisodeEnd::EpochCut(_))
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeSpan {
    pub start: usize,
    pub len: usize,
    pub end: EpisodeEnd,
}

#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub obs: Vec<DVector<f64>>,
    pub actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub episodes: Vec<EpisodeSpan>,
    /// Filled by the engine after the critics are updated.
    pub reward_advantages: Vec<f64>,
    pub cost_advantages: Vec<f64>,
    pub reward_returns: Vec<f64>,
    pub cost_returns: Vec<f64>,
    /// Mean undiscounted cost over complete episodes.
    pub c_ep: f64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Per-episode undiscounted reward sums of complete episodes.
    pub fn episode_returns(&self) -> Vec<f64> {
        self.episodes
            .iter()
            .filter(|e| e.end.is_complete())
            .map(|e| self.rewards[e.start..e.start + e.len].iter().sum())
            .collect()
    }

    pub fn episode_costs(&self) -> Vec<f64> {
        self.episodes
            .iter()
            .filter(|e| e.end.is_complete())
            .map(|e| self.costs[e.start..e.start + e.len].iter().sum())
            .collect()
    }
}

/// Gathers exactly `steps` transitions under the current policy.
pub fn collect(
    spec: &EnvSpec,
    policy: &ParamSet,
    steps: usize,
    workers: usize,
    master_rng: &mut ChaCha8Rng,
) -> Result<RolloutBatch> {
    if workers == 0 {
        return Err(Error::Usage("rollout.workers must be at least 1".into()));
    }
    if steps < spec.horizon() {
        return Err(Error::Usage(format!(
            "steps_per_epoch {steps} is smaller than one episode horizon {}",
            spec.horizon()
        )));
    }
    // Draw all worker seeds up front so the stream consumption is fixed.
    let seeds: Vec<u64> = (0..workers).map(|_| master_rng.gen()).collect();
    let base = steps / workers;
    let extra = steps % workers;

    let mut batch = RolloutBatch {
        obs: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        old_log_probs: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        costs: Vec::with_capacity(steps),
        episodes: Vec::new(),
        reward_advantages: vec![0.0; steps],
        cost_advantages: vec![0.0; steps],
        reward_returns: vec![0.0; steps],
        cost_returns: vec![0.0; steps],
        c_ep: 0.0,
    };

    for (w, &seed) in seeds.iter().enumerate() {
        let quota = base + usize::from(w < extra);
        if quota == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = spec.build()?;
        let mut obs = env.reset(rng.gen())?;
        let mut ep_start = batch.obs.len();
        for i in 0..quota {
            let (out, _) = forward(policy, &obs)?;
            let dist = policy.dist_from_output(&out);
            let action = dist.sample(&mut rng);
            let log_prob = dist.log_prob(&action)?;
            let step = env.step(&action)?;
            batch.obs.push(obs);
            batch.actions.push(action);
            batch.old_log_probs.push(log_prob);
            batch.rewards.push(step.reward);
            batch.costs.push(step.cost);
            let ep_len = batch.obs.len() - ep_start;
            let quota_done = i + 1 == quota;
            if step.done {
                batch.episodes.push(EpisodeSpan {
                    start: ep_start,
                    len: ep_len,
                    end: EpisodeEnd::Terminated,
                });
            } else if step.truncated {
                batch.episodes.push(EpisodeSpan {
                    start: ep_start,
                    len: ep_len,
                    end: EpisodeEnd::Truncated(step.obs.clone()),
                });
            } else if quota_done {
                batch.episodes.push(EpisodeSpan {
                    start: ep_start,
                    len: ep_len,
                    end: EpisodeEnd::EpochCut(step.obs.clone()),
                });
            }
            if step.done || step.truncated {
                ep_start = batch.obs.len();
                if !quota_done {
                    obs = env.reset(rng.gen())?;
                } else {
                    obs = step.obs; // unused; keeps the loop uniform
                }
            } else {
                obs = step.obs;
            }
        }
    }
    batch.c_ep = episodic_cost(&batch)?;
    Ok(batch)
}

#[derive(Debug, Clone, Copy)]
pub struct GaeParams {
    pub gamma: f64,
    pub lambda: f64,
}

/// Reverse-recursion GAE over one signal. `tail_values` carries one
/// bootstrap value per episode (zero for terminal episodes).
pub fn compute_gae(
    signal: &[f64],
    values: &[f64],
    tail_values: &[f64],
    episodes: &[EpisodeSpan],
    params: GaeParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if signal.len() != values.len() {
        return Err(Error::Config(format!(
            "signal length {} does not match value length {}",
            signal.len(),
            values.len()
        )));
    }
    if tail_values.len() != episodes.len() {
        return Err(Error::Config(
            "need exactly one bootstrap value per episode".into(),
        ));
    }
    let mut advantages = vec![0.0; signal.len()];
    let mut returns = vec![0.0; signal.len()];
    for (ep, &tail) in episodes.iter().zip(tail_values) {
        if ep.start + ep.len > signal.len() {
            return Err(Error::Config("episode span out of batch range".into()));
        }
        let mut adv = 0.0;
        let mut v_next = tail;
        for t in (ep.start..ep.start + ep.len).rev() {
            let delta = signal[t] + params.gamma * v_next - values[t];
            adv = delta + params.gamma * params.lambda * adv;
            advantages[t] = adv;
            returns[t] = adv + values[t];
            v_next = values[t];
        }
    }
    Ok((advantages, returns))
}

/// Mean undiscounted episodic cost over the batch's complete episodes.
pub fn episodic_cost(batch: &RolloutBatch) -> Result<f64> {
    let sums = batch.episode_costs();
    if sums.is_empty() {
        return Err(Error::DegenerateInput(
            "no complete episode in batch; cannot estimate episodic cost".into(),
        ));
    }
    Ok(sums.iter().sum::<f64>() / sums.len() as f64)
}

/// In-place shift-and-scale to zero mean, unit variance. Degenerate spreads
/// (all values equal) only get the shift.
pub fn normalize_in_place(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in xs.iter_mut() {
        *x -= mean;
        if std > 1e-8 {
            *x /= std;
        }
    }
}
