//! Training engine: the per-epoch loop (collect, critic regression, GAE,
//! margin blending, K-FAC preconditioned momentum updates with rollback),
//! plus configuration, metrics, checkpoints, and the CLI entry points.

mod adam;
mod checkpoint;
mod config;
mod metrics;


pub use adam::Adam;
pub use checkpoint::{params_from_flat, Checkpoint, CHECKPOINT_VERSION};
pub use config::{KfacConfig, TrainConfig};
pub use metrics::{read_csv, render, EpochMetrics, CSV_HEADER};

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmdp::{ActionSpace, EnvSpec};
use crate::error::{Error, Result};
use crate::kfac::{BatchMoments, CurvatureSet, ObjectiveTag};
use crate::nn::{
    backward_from_output, backward_log_prob, forward, mlp_specs, LayerSpec, ParamSet,
};
use crate::rollout::{collect, compute_gae, normalize_in_place, EpisodeEnd, GaeParams, RolloutBatch};
use crate::safegrad::{blend_weights, combine};
use crate::trust::{momentum_step, rollback_check, scale_factor, MomentumState};

/// Small output-layer gain keeps the initial policy near-uniform
/// (categorical) or near-zero-mean (Gaussian).
const POLICY_OUTPUT_GAIN: f64 = 0.01;
const CRITIC_OUTPUT_GAIN: f64 = 1.0;
/// Decorrelates evaluation episodes from the training stream.
const EVAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// All mutable training state. One trainer owns everything; rollout
/// collection is the only parallel region.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub policy: ParamSet,
    pub critic_r: ParamSet,
    pub critic_c: ParamSet,
    pub epoch: usize,
    /// Largest observed age (in minibatch steps) of the eigendecompositions
    /// at the moment they were applied.
    pub max_eig_staleness: usize,
    pub(crate) policy_specs: Vec<LayerSpec>,
    pub(crate) critic_specs: Vec<LayerSpec>,
    pub(crate) adam_r: Adam,
    pub(crate) adam_c: Adam,
    pub(crate) curv_r: CurvatureSet,
    pub(crate) curv_c: CurvatureSet,
    pub(crate) momentum: MomentumState,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) global_step: usize,
    pub(crate) last_refresh_step: usize,
}

#[derive(Default)]
struct EpochCounters {
    updates: usize,
    conflicts: usize,
    rollbacks: usize,
    committed: usize,
    committed_kl: f64,
    nu_sum: f64,
    refreshes: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        if cfg.steps_per_epoch % cfg.minibatch != 0 {
            eprintln!(
                "warning: minibatch {} does not divide steps_per_epoch {}; \
                 the trailing {} samples of each pass are dropped",
                cfg.minibatch,
                cfg.steps_per_epoch,
                cfg.steps_per_epoch % cfg.minibatch
            );
        }
        let obs_dim = cfg.env.obs_dim();
        let (out_dim, log_std_dim) = match cfg.env.action_space() {
            ActionSpace::Continuous { dim } => (dim, Some(dim)),
            ActionSpace::Discrete { n } => (n, None),
        };
        let policy_specs = mlp_specs(obs_dim, &cfg.hidden, out_dim);
        let critic_specs = mlp_specs(obs_dim, &cfg.hidden, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let policy = ParamSet::init(
            &policy_specs,
            log_std_dim,
            POLICY_OUTPUT_GAIN,
            cfg.log_std_init,
            &mut rng,
        );
        let critic_r = ParamSet::init(&critic_specs, None, CRITIC_OUTPUT_GAIN, 0.0, &mut rng);
        let critic_c = ParamSet::init(&critic_specs, None, CRITIC_OUTPUT_GAIN, 0.0, &mut rng);
        let adam_r = Adam::new(critic_r.num_params(), cfg.critic_lr);
        let adam_c = Adam::new(critic_c.num_params(), cfg.critic_lr);
        let curv_r = CurvatureSet::new(&policy, ObjectiveTag::Reward, cfg.kfac.decay, cfg.kfac.damping);
        let curv_c = CurvatureSet::new(&policy, ObjectiveTag::Cost, cfg.kfac.decay, cfg.kfac.damping);
        let momentum = MomentumState::new(&policy);
        Ok(Trainer {
            cfg,
            policy,
            critic_r,
            critic_c,
            epoch: 0,
            max_eig_staleness: 0,
            policy_specs,
            critic_specs,
            adam_r,
            adam_c,
            curv_r,
            curv_c,
            momentum,
            rng,
            global_step: 0,
            last_refresh_step: 0,
        })
    }

    /// Rebuilds a trainer from a checkpoint. The fresh config drives the run
    /// (epoch count, output paths, schedules); the checkpoint supplies the
    /// parameters, momentum, epoch counter, and RNG stream. Curvature
    /// statistics restart and are rebuilt within one refresh interval.
    pub fn from_checkpoint(cfg: TrainConfig, ckpt: Checkpoint) -> Result<Trainer> {
        let mut t = Trainer::new(cfg)?;
        if ckpt.policy_specs != t.policy_specs || ckpt.critic_specs != t.critic_specs {
            return Err(Error::Config(
                "checkpoint network architecture does not match the config".into(),
            ));
        }
        let expected_ls = t.policy.log_std.as_ref().map(|v| v.len());
        if ckpt.policy_log_std_dim != expected_ls {
            return Err(Error::Config(
                "checkpoint policy family does not match the environment".into(),
            ));
        }
        t.policy = params_from_flat(&ckpt.policy_specs, ckpt.policy_log_std_dim, &ckpt.policy_params)?;
        t.critic_r = params_from_flat(&ckpt.critic_specs, None, &ckpt.critic_r_params)?;
        t.critic_c = params_from_flat(&ckpt.critic_specs, None, &ckpt.critic_c_params)?;
        t.momentum.m = params_from_flat(&ckpt.policy_specs, ckpt.policy_log_std_dim, &ckpt.momentum)?;
        t.momentum.prev_m = t.momentum.m.clone();
        t.rng = ckpt.rng;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            policy_specs: self.policy_specs.clone(),
            policy_log_std_dim: self.policy.log_std.as_ref().map(|v| v.len()),
            critic_specs: self.critic_specs.clone(),
            policy_params: self.policy.flatten().as_slice().to_vec(),
            critic_r_params: self.critic_r.flatten().as_slice().to_vec(),
            critic_c_params: self.critic_c.flatten().as_slice().to_vec(),
            momentum: self.momentum.m.flatten().as_slice().to_vec(),
            epoch: self.epoch,
            rng: self.rng.clone(),
        }
    }

    /// One full pass: collect, fit critics, estimate advantages, then K
    /// inner passes of preconditioned, blended, KL-guarded minibatch steps.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let start = Instant::now();
        let mut batch = collect(
            &self.cfg.env,
            &self.policy,
            self.cfg.steps_per_epoch,
            self.cfg.workers,
            &mut self.rng,
        )?;
        let gae = GaeParams {
            gamma: self.cfg.gamma,
            lambda: self.cfg.lambda,
        };

        // Regression targets come from the pre-update critics.
        let (_, ret_r) = gae_with(&self.critic_r, &batch.rewards, &batch, gae)?;
        let (_, ret_c) = gae_with(&self.critic_c, &batch.costs, &batch, gae)?;
        batch.reward_returns = ret_r;
        batch.cost_returns = ret_c;
        update_critic(
            &mut self.critic_r,
            &mut self.adam_r,
            &batch.obs,
            &batch.reward_returns,
            self.cfg.critic_iters,
            self.cfg.critic_minibatch,
            &mut self.rng,
        )?;
        update_critic(
            &mut self.critic_c,
            &mut self.adam_c,
            &batch.obs,
            &batch.cost_returns,
            self.cfg.critic_iters,
            self.cfg.critic_minibatch,
            &mut self.rng,
        )?;

        // Advantages from the refreshed critics; only the reward stream is
        // normalized — cost advantages keep their scale so the constraint
        // signal stays comparable across epochs.
        let (adv_r, _) = gae_with(&self.critic_r, &batch.rewards, &batch, gae)?;
        let (adv_c, _) = gae_with(&self.critic_c, &batch.costs, &batch, gae)?;
        batch.reward_advantages = adv_r;
        batch.cost_advantages = adv_c;
        normalize_in_place(&mut batch.reward_advantages);

        let (w_r, w_c) = if self.cfg.margin_enabled {
            blend_weights(batch.c_ep, &self.cfg.margin)
        } else {
            (1.0, 0.0)
        };

        let n = batch.len();
        let b = self.cfg.minibatch.min(n);
        let chunks = n / b;
        let mut counters = EpochCounters::default();
        for _ in 0..self.cfg.inner_passes {
            let order = rand::seq::index::sample(&mut self.rng, n, n).into_vec();
            for c in 0..chunks {
                self.minibatch_step(&batch, &order[c * b..(c + 1) * b], &mut counters)?;
            }
        }

        self.epoch += 1;
        let returns = batch.episode_returns();
        let costs = batch.episode_costs();
        let (return_mean, return_std) = mean_std(&returns);
        let (_, cost_std) = mean_std(&costs);
        Ok(EpochMetrics {
            epoch: self.epoch,
            return_mean,
            return_std,
            cost_ep_mean: batch.c_ep,
            cost_ep_std: cost_std,
            w_r,
            w_c,
            conflict_frac: frac(counters.conflicts, counters.updates),
            rollbacks: counters.rollbacks,
            kl_mean: if counters.committed > 0 {
                counters.committed_kl / counters.committed as f64
            } else {
                0.0
            },
            nu_mean: if counters.updates > 0 {
                counters.nu_sum / counters.updates as f64
            } else {
                0.0
            },
            fisher_refreshes: counters.refreshes,
            seconds: if self.cfg.timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    fn minibatch_step(
        &mut self,
        batch: &RolloutBatch,
        idx: &[usize],
        counters: &mut EpochCounters,
    ) -> Result<()> {
        self.global_step += 1;
        let inv_b = 1.0 / idx.len() as f64;

        let mut g_r = self.policy.zeros_like();
        let mut g_c = self.policy.zeros_like();
        let mut samples = Vec::with_capacity(idx.len());
        let mut obs = Vec::with_capacity(idx.len());
        for &i in idx {
            let (out, cache) = forward(&self.policy, &batch.obs[i])?;
            let dist = self.policy.dist_from_output(&out);
            let lp = dist.log_prob(&batch.actions[i])?;
            let ratio = (lp - batch.old_log_probs[i]).exp();
            let (score, stats) = backward_log_prob(&self.policy, &cache, &dist, &batch.actions[i])?;
            // Descent convention: reward ascent enters negated, cost stays
            // a descent direction, and the step applies -alpha * m.
            g_r.axpy_mut(-ratio * batch.reward_advantages[i] * inv_b, &score);
            g_c.axpy_mut(ratio * batch.cost_advantages[i] * inv_b, &score);
            samples.push(stats);
            obs.push(batch.obs[i].clone());
        }

        // Factor statistics on the T_s schedule; forced before the first
        // refresh so the bootstrap decomposition has something to work with.
        let bootstrapped = self.curv_r.has_eigs();
        if self.global_step % self.cfg.kfac.stats_every == 0 || !bootstrapped {
            let moments = BatchMoments::from_samples(&samples)?;
            self.curv_r.update_from_moments(&moments)?;
            self.curv_c.update_from_moments(&moments)?;
        }
        if !bootstrapped {
            self.curv_r.refresh_eig()?;
            self.curv_c.refresh_eig()?;
            self.last_refresh_step = self.global_step;
            counters.refreshes += 1;
        }
        self.max_eig_staleness = self
            .max_eig_staleness
            .max(self.global_step - self.last_refresh_step);

        let gt_r = self.curv_r.apply_inverse(&g_r)?;
        let gt_c = self.curv_c.apply_inverse(&g_c)?;

        let blended = if self.cfg.margin_enabled {
            match combine(&gt_r, &gt_c, batch.c_ep, &self.cfg.margin) {
                Ok(d) => Some((d.g_blend, d.conflict)),
                // Both gradients vanished on this minibatch: nothing to do.
                Err(Error::DegenerateInput(_)) => None,
                Err(e) => return Err(e),
            }
        } else if gt_r.norm() > 0.0 {
            Some((gt_r, false))
        } else {
            None
        };

        if let Some((g_blend, conflict)) = blended {
            let nu = scale_factor(
                &g_blend,
                &self.curv_r,
                self.cfg.trust.kl_target,
                idx.len(),
                batch.len(),
                self.cfg.trust.nu_max,
            )?;
            let step = momentum_step(&mut self.momentum, &g_blend, nu, &self.cfg.trust);
            let mut candidate = self.policy.clone();
            candidate.axpy_mut(1.0, &step);
            let check = match rollback_check(
                &self.policy,
                &candidate,
                &obs,
                self.cfg.trust.kl_rollback,
                self.cfg.trust.kl_direction,
            ) {
                Ok(c) => c,
                Err(e) => {
                    self.momentum.rollback();
                    return Err(e);
                }
            };
            counters.updates += 1;
            counters.nu_sum += nu;
            if conflict {
                counters.conflicts += 1;
            }
            if check.rollback {
                self.momentum.rollback();
                counters.rollbacks += 1;
            } else {
                self.policy = candidate;
                counters.committed += 1;
                counters.committed_kl += check.kl_mean;
            }
        }

        if self.global_step % self.cfg.kfac.refresh_every == 0 {
            self.curv_r.refresh_eig()?;
            self.curv_c.refresh_eig()?;
            self.last_refresh_step = self.global_step;
            counters.refreshes += 1;
        }
        Ok(())
    }
}

/// Per-step values and per-episode bootstrap tails under one critic, fed
/// through GAE for the given signal.
fn gae_with(
    critic: &ParamSet,
    signal: &[f64],
    batch: &RolloutBatch,
    params: GaeParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut values = Vec::with_capacity(batch.len());
    for o in &batch.obs {
        values.push(forward(critic, o)?.0[0]);
    }
    let mut tails = Vec::with_capacity(batch.episodes.len());
    for ep in &batch.episodes {
        tails.push(match &ep.end {
            EpisodeEnd::Terminated => 0.0,
            EpisodeEnd::Truncated(tail_obs) | EpisodeEnd::EpochCut(tail_obs) => {
                forward(critic, tail_obs)?.0[0]
            }
        });
    }
    compute_gae(signal, &values, &tails, &batch.episodes, params)
}

/// Regresses one critic toward its targets by minibatch MSE.
fn update_critic(
    critic: &mut ParamSet,
    adam: &mut Adam,
    obs: &[nalgebra::DVector<f64>],
    targets: &[f64],
    iters: usize,
    minibatch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if obs.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} observations vs {} targets",
            obs.len(),
            targets.len()
        )));
    }
    let k = minibatch.min(obs.len());
    for _ in 0..iters {
        let idx = rand::seq::index::sample(rng, obs.len(), k);
        let mut grads = critic.zeros_like();
        let mut loss = 0.0;
        let inv_k = 1.0 / k as f64;
        for i in idx.iter() {
            let (out, cache) = forward(critic, &obs[i])?;
            let err = out[0] - targets[i];
            loss += err * err * inv_k;
            let out_grad = nalgebra::DVector::from_vec(vec![2.0 * err * inv_k]);
            let (g, _) = backward_from_output(critic, &cache, &out_grad)?;
            grads.axpy_mut(1.0, &g);
        }
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "critic regression diverged (loss {loss})"
            )));
        }
        adam.step(critic, &grads)?;
    }
    Ok(())
}

/// Mean and population standard deviation; (0, 0) for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Rolls out a policy for a fixed number of evaluation episodes.
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub costs: Vec<f64>,
}

pub fn evaluate(
    policy: &ParamSet,
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    deterministic: bool,
) -> Result<EvalSummary> {
    let mut env = spec.build()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_SALT);
    let mut returns = Vec::with_capacity(episodes);
    let mut costs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut o = env.reset(rng.gen())?;
        let mut ret = 0.0;
        let mut cost = 0.0;
        loop {
            let (out, _) = forward(policy, &o)?;
            let dist = policy.dist_from_output(&out);
            let action = if deterministic {
                dist.mode()
            } else {
                dist.sample(&mut rng)
            };
            let sr = env.step(&action)?;
            ret += sr.reward;
            cost += sr.cost;
            if sr.done || sr.truncated {
                break;
            }
            o = sr.obs;
        }
        returns.push(ret);
        costs.push(cost);
    }
    Ok(EvalSummary { returns, costs })
}

pub struct TrainOpts<'a> {
    pub config_path: &'a Path,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Suppresses per-epoch stdout lines (metrics still go to the CSV).
    pub quiet: bool,
}

pub fn run_train(opts: &TrainOpts) -> Result<()> {
    let mut cfg = TrainConfig::load(opts.config_path)?;
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(d) = &opts.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate()?;

    let mut trainer = match &opts.resume {
        Some(path) => Trainer::from_checkpoint(cfg.clone(), Checkpoint::load(path)?)?,
        None => Trainer::new(cfg.clone())?,
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    let mut metrics_file = if opts.resume.is_some() && metrics_path.exists() {
        std::fs::OpenOptions::new().append(true).open(&metrics_path)?
    } else {
        let mut f = std::fs::File::create(&metrics_path)?;
        writeln!(f, "{CSV_HEADER}")?;
        f
    };

    let mut recent: VecDeque<(f64, f64)> = VecDeque::with_capacity(10);
    while trainer.epoch < cfg.epochs {
        let m = trainer.train_epoch()?;
        writeln!(metrics_file, "{}", m.csv_row())?;
        metrics_file.flush()?;
        if recent.len() == 10 {
            recent.pop_front();
        }
        recent.push_back((m.return_mean, m.cost_ep_mean));
        if !opts.quiet {
            println!(
                "epoch {:>4}/{} return {:+8.3} cost {:7.2} w_c {:.3} conflict {:.2} rollbacks {:>3} kl {:.5} nu {:.4}",
                m.epoch,
                cfg.epochs,
                m.return_mean,
                m.cost_ep_mean,
                m.w_c,
                m.conflict_frac,
                m.rollbacks,
                m.kl_mean,
                m.nu_mean
            );
        }
        if trainer.epoch % cfg.checkpoint_every == 0 {
            let path = cfg.out_dir.join(format!("ckpt_{:05}.json", trainer.epoch));
            trainer.snapshot().save(&path)?;
        }
    }
    trainer.snapshot().save(&cfg.out_dir.join("ckpt_final.json"))?;
    if !opts.quiet && !recent.is_empty() {
        let n = recent.len() as f64;
        let ret = recent.iter().map(|x| x.0).sum::<f64>() / n;
        let cost = recent.iter().map(|x| x.1).sum::<f64>() / n;
        println!(
            "final-{} mean return {ret:+.4}, mean episodic cost {cost:.4}",
            recent.len()
        );
    }
    Ok(())
}

pub fn run_eval(ckpt_path: &Path, episodes: usize, deterministic: bool) -> Result<()> {
    if episodes == 0 {
        return Err(Error::Usage("eval needs at least one episode".into()));
    }
    let ckpt = Checkpoint::load(ckpt_path)?;
    let policy = params_from_flat(&ckpt.policy_specs, ckpt.policy_log_std_dim, &ckpt.policy_params)?;
    let summary = evaluate(&policy, &ckpt.config.env, episodes, ckpt.config.seed, deterministic)?;
    let (return_mean, _) = mean_std(&summary.returns);
    let (cost_mean, _) = mean_std(&summary.costs);
    println!("episodes {episodes}");
    println!("return_mean {return_mean:.6}");
    println!("cost_mean {cost_mean:.6}");
    Ok(())
}

/// Reads a metrics CSV and re-renders it in the requested format.
pub fn run_export(metrics_path: &Path, format: &str) -> Result<String> {
    let text = std::fs::read_to_string(metrics_path)?;
    let records = read_csv(&text)?;
    render(&records, format)
}
