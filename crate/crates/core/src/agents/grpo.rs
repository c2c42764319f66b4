use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_categorical, softmax, AgentError, Result};
use crate::data::EpisodeWindow;
use crate::env::{Action, TradingEnv};
use crate::nn::{Model, ObsBatch, N_ACTIONS};
use crate::tensor::{clip_grad_norm, AdamW, AdamWConfig, Tape};
use crate::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoHyper {
    pub group_size: usize,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub kl_target: f64,
    /// Epochs over each group.
    pub repeat_times: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub std_floor: f64,
    /// The knobs below are accepted for search-space compatibility and
    /// have no effect: returns are undiscounted and there is no critic.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub gae_lambda: f64,
    #[serde(default)]
    pub vf_coef: f64,
    #[serde(default)]
    pub state_value_tau: f64,
}

fn default_gamma() -> f64 {
    0.99
}

impl Default for GrpoHyper {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            kl_target: 0.01,
            repeat_times: 4,
            batch_size: 128,
            lr: 1e-4,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            std_floor: 1e-8,
            gamma: default_gamma(),
            gae_lambda: 0.95,
            vf_coef: 0.5,
            state_value_tau: 0.0,
        }
    }
}

impl GrpoHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::Hyper(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if self.entropy_coef < 0.0 || self.kl_target <= 0.0 || self.std_floor <= 0.0 {
            return bad("entropy_coef must be non-negative; kl_target and std_floor positive");
        }
        if self.repeat_times == 0 || self.batch_size == 0 {
            return bad("repeat_times and batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.weight_decay >= 0.0 && self.grad_clip > 0.0) {
            return bad("lr and grad_clip must be positive, weight_decay non-negative");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// One stochastic rollout of the acting policy.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub states: Vec<Tensor>,
    pub actions: Vec<usize>,
    /// `log pi_old(a_t | s_t)`.
    pub log_probs: Vec<f64>,
    /// Full `log pi_old(. | s_t)` rows, kept for the KL check.
    pub dists: Vec<[f64; N_ACTIONS]>,
    pub rewards: Vec<f64>,
    /// Undiscounted sum of rewards.
    pub ret: f64,
}

#[derive(Clone, Debug)]
pub struct GroupRollout {
    pub window: EpisodeWindow,
    pub trajectories: Vec<Trajectory>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// `(r_i - mean(r)) / max(std(r), floor)` with the population std.
pub fn grpo_advantages(returns: &[f64], std_floor: f64) -> Vec<f64> {
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt().max(std_floor);
    returns.iter().map(|r| (r - mean) / denom).collect()
}

/// Clipped surrogate for one sample.
pub fn surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

fn log_softmax_row(s: &[f64]) -> [f64; N_ACTIONS] {
    let mut out = [0.0; N_ACTIONS];
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + s.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(s) {
        *o = v - lse;
    }
    out
}

/// Runs `g` rollouts in lockstep from the same reset state, sampling
/// actions from the softmax policy. Rewards are multiplied by
/// `reward_scale` before they are stored.
pub fn grpo_collect<M: Model<f64>>(
    policy: &M,
    env: &TradingEnv<'_>,
    window: EpisodeWindow,
    g: usize,
    reward_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GroupRollout> {
    if g < 2 {
        return Err(AgentError::Hyper("group size must be at least 2".into()));
    }
    let mut envs = vec![env.clone(); g];
    let mut obs = Vec::with_capacity(g);
    for e in &mut envs {
        obs.push(e.reset(window)?);
    }
    let mut trajs = vec![Trajectory::default(); g];
    loop {
        let scores = policy.scores(&ObsBatch::from_windows(&obs)?)?;
        let mut done = false;
        for (i, (e, traj)) in envs.iter_mut().zip(&mut trajs).enumerate() {
            let row = &scores.data()[i * N_ACTIONS..(i + 1) * N_ACTIONS];
            let a = sample_categorical(&softmax(row), rng);
            let logp = log_softmax_row(row);
            let out = e.step(Action::ALL[a])?;
            let r = out.reward * reward_scale;
            traj.states.push(std::mem::replace(&mut obs[i], out.observation));
            traj.actions.push(a);
            traj.log_probs.push(logp[a]);
            traj.dists.push(logp);
            traj.rewards.push(r);
            traj.ret += r;
            done = out.done;
        }
        if done {
            break;
        }
    }
    let returns: Vec<f64> = trajs.iter().map(|t| t.ret).collect();
    Ok(GroupRollout {
        window,
        trajectories: trajs,
        returns,
        advantages: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Mean minibatch loss of the last epoch run.
    pub loss: f64,
    /// Mean KL(old || new) after the last epoch run.
    pub kl: f64,
    pub epochs: usize,
}

struct Sample<'a> {
    state: &'a Tensor,
    action: usize,
    old_logp: f64,
    old_dist: &'a [f64; N_ACTIONS],
    adv: f64,
}

fn mean_kl<M: Model<f64>>(policy: &M, samples: &[Sample<'_>]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(512) {
        let scores = policy.scores(&ObsBatch::from_windows(chunk.iter().map(|s| s.state))?)?;
        for (i, s) in chunk.iter().enumerate() {
            let new = log_softmax_row(&scores.data()[i * N_ACTIONS..(i + 1) * N_ACTIONS]);
            total += (0..N_ACTIONS).map(|a| s.old_dist[a].exp() * (s.old_dist[a] - new[a])).sum::<f64>();
        }
    }
    Ok(total / samples.len() as f64)
}

/// Clipped-surrogate epochs with entropy bonus on one group; stops early
/// once the mean KL from the collecting policy exceeds `kl_target`.
pub fn grpo_update<M: Model<f64>>(
    policy: &mut M,
    opt: &mut AdamW<f64>,
    group: &GroupRollout,
    hyper: &GrpoHyper,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let mut samples = Vec::new();
    for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
        for t in 0..traj.actions.len() {
            samples.push(Sample {
                state: &traj.states[t],
                action: traj.actions[t],
                old_logp: traj.log_probs[t],
                old_dist: &traj.dists[t],
                adv,
            });
        }
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stats = UpdateStats::default();
    let eps = hyper.clip_eps;
    for _ in 0..hyper.repeat_times {
        order.shuffle(rng);
        let mut losses = Vec::new();
        for mb in order.chunks(hyper.batch_size) {
            let mut tape = Tape::new();
            let bound = policy.params().bind(&mut tape, true)?;
            let obs = ObsBatch::from_windows(mb.iter().map(|&i| samples[i].state))?;
            let logits = policy.forward(&mut tape, &bound, &obs)?;
            let logp_all = tape.log_softmax(logits)?;
            let actions: Vec<usize> = mb.iter().map(|&i| samples[i].action).collect();
            let logp = tape.pick(logp_all, &actions)?;
            let old = tape.constant(Tensor::vector(mb.iter().map(|&i| samples[i].old_logp).collect()))?;
            let adv = tape.constant(Tensor::vector(mb.iter().map(|&i| samples[i].adv).collect()))?;
            let diff = tape.sub(logp, old)?;
            let ratio = tape.exp(diff)?;
            let s1 = tape.mul(ratio, adv)?;
            let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps)?;
            let s2 = tape.mul(clipped, adv)?;
            let surr = tape.minimum(s1, s2)?;
            let surr_mean = tape.mean(surr)?;
            let probs = tape.exp(logp_all)?;
            let plogp = tape.mul(probs, logp_all)?;
            let neg_h = tape.sum(plogp)?;
            let neg_h_mean = tape.scale(neg_h, 1.0 / mb.len() as f64)?;
            // loss = -surrogate - c * H
            let ent_term = tape.scale(neg_h_mean, hyper.entropy_coef)?;
            let neg_surr = tape.neg(surr_mean)?;
            let loss = tape.add(neg_surr, ent_term)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(AgentError::NonFinite(value));
            }
            let mut grads = bound.grads(&tape.backward(loss)?);
            clip_grad_norm(&mut grads, hyper.grad_clip);
            opt.step(policy.params_mut(), &grads)?;
            losses.push(value);
        }
        stats.epochs += 1;
        stats.loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        stats.kl = mean_kl(policy, &samples)?;
        if stats.kl > hyper.kl_target {
            break;
        }
    }
    Ok(stats)
}

/// Policy, optimizer and sampling state for GRPO training.
#[derive(Clone, Debug)]
pub struct Grpo<M> {
    pub policy: M,
    pub hyper: GrpoHyper,
    opt: AdamW<f64>,
    rng: ChaCha8Rng,
}

impl<M: Model<f64>> Grpo<M> {
    pub fn new(policy: M, hyper: GrpoHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let opt = AdamW::new(policy.params(), hyper.adamw());
        Ok(Self {
            policy,
            hyper,
            opt,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn collect(&mut self, env: &TradingEnv<'_>, window: EpisodeWindow, reward_scale: f64) -> Result<GroupRollout> {
        let mut group = grpo_collect(&self.policy, env, window, self.hyper.group_size, reward_scale, &mut self.rng)?;
        group.advantages = grpo_advantages(&group.returns, self.hyper.std_floor);
        Ok(group)
    }

    pub fn update(&mut self, group: &GroupRollout) -> Result<UpdateStats> {
        grpo_update(&mut self.policy, &mut self.opt, group, &self.hyper, &mut self.rng)
    }
}
