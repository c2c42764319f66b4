use std::ops::Range;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::space::{ddqn_hyper, grpo_hyper, net_config, Params, SearchSpace};
use super::store::{TrialRecord, TrialStatus, TrialStore};
use super::tpe::suggest;
use super::{Result, TunerError};
use crate::agents::{
    train_ddqn, train_grpo, Algo, AgentCheckpoint, AgentError, Ddqn, EvalHook, Grpo, TrainCtx, TrainSummary,
};
use crate::data::{sample_windows, EpisodeWindow, MarketData, SplitTag, N_FEATURES};
use crate::env::EnvConfig;
use crate::eval::{evaluate_windows, EvalError};
use crate::nn::{Model, Network};

/// Evaluations without a new strict maximum before a trial stops.
pub const PATIENCE: usize = 5;

/// Per-trial training and validation budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    /// Environment steps of training (rounded up to whole episodes, or
    /// whole groups for GRPO).
    pub train_steps: u64,
    /// Training episode length in minutes (the horizon unit).
    pub episode_len: usize,
    /// Environment steps between validation rounds.
    pub eval_interval: u64,
    pub n_eval: usize,
    pub eval_len: usize,
    pub eval_seed: u64,
}

impl Budget {
    pub fn full() -> Self {
        Self {
            train_steps: 600_000,
            episode_len: 3000,
            eval_interval: 30_000,
            n_eval: 256,
            eval_len: 3000,
            eval_seed: crate::eval::DEFAULT_EVAL_SEED,
        }
    }

    /// Every size knob of [`Budget::full`] divided by 20.
    pub fn desk() -> Self {
        Self::full().scaled_down(20)
    }

    /// Smallest budget that still trains, validates and early-stops; used
    /// by `selftest` so the whole grid runs in minutes on one core.
    pub fn smoke() -> Self {
        Self {
            train_steps: 600,
            episode_len: 50,
            eval_interval: 300,
            n_eval: 8,
            eval_len: 50,
            eval_seed: crate::eval::DEFAULT_EVAL_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_len < 2 || self.eval_len < 2 || self.n_eval == 0 || self.eval_interval == 0 || self.train_steps == 0 {
            return Err(TunerError::Config(format!("budget sizes must be positive (lengths at least 2): {self:?}")));
        }
        Ok(())
    }

    /// Training episodes covering `train_steps` when each episode yields
    /// `steps_per_episode` environment steps.
    pub fn episodes(&self, steps_per_episode: usize) -> usize {
        (self.train_steps as usize).div_ceil(steps_per_episode.max(1)).max(1)
    }

    pub fn scaled_down(self, f: usize) -> Self {
        let f = f.max(1);
        Self {
            train_steps: (self.train_steps / f as u64).max(1),
            episode_len: (self.episode_len / f).max(2),
            eval_interval: (self.eval_interval / f as u64).max(1),
            n_eval: (self.n_eval / f).max(1),
            eval_len: (self.eval_len / f).max(2),
            eval_seed: self.eval_seed,
        }
    }
}

/// True once the running maximum has gone [`PATIENCE`] evaluations
/// without a strict increase.
pub fn check_early_stop(history: &[f64]) -> bool {
    let n = history.len();
    if n <= PATIENCE {
        return false;
    }
    let before = history[..n - PATIENCE].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    history[n - PATIENCE..].iter().all(|&x| x <= before)
}

/// Everything a trial needs besides its parameters.
#[derive(Clone, Debug)]
pub struct TrialCtx<'a> {
    pub data: &'a MarketData,
    pub env: EnvConfig,
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub algo: Algo,
    pub net: String,
    pub budget: Budget,
    pub no_llm: bool,
    pub normalize_rewards: bool,
    /// Where best checkpoints are written (`checkpoints/trial_NNNN.json`).
    pub out_dir: Option<PathBuf>,
}

pub struct TrialOutcome {
    pub record: TrialRecord,
    pub best: Option<AgentCheckpoint>,
}

fn validation_windows(ctx: &TrialCtx<'_>, lookback: usize) -> Result<Vec<EpisodeWindow>> {
    let b = &ctx.budget;
    Ok(sample_windows(ctx.valid.clone(), SplitTag::Validation, b.eval_len, lookback, b.n_eval, b.eval_seed)
        .map_err(EvalError::from)?)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

struct Validator<'c, 'a> {
    ctx: &'c TrialCtx<'a>,
    env: EnvConfig,
    windows: Vec<EpisodeWindow>,
    best: Option<Network<f64>>,
    error: Option<EvalError>,
    last_eval: u64,
}

impl Validator<'_, '_> {
    /// Scores `m` on the validation windows; false asks training to stop.
    fn eval(&mut self, m: &Network<f64>, steps: u64, record: &mut TrialRecord, early: bool) -> bool {
        self.last_eval = steps;
        match evaluate_windows(m, self.ctx.data, &self.env, &self.windows) {
            Ok(res) => {
                let score = mean(&res.iter().map(|r| r.cumulative_return_usdt).collect::<Vec<_>>());
                log::debug!("trial {} step {steps}: validation {score:.4}", record.trial_id);
                if record.push_eval(score) {
                    self.best = Some(m.clone());
                }
                !(early && check_early_stop(&record.eval_history))
            }
            Err(e) => {
                self.error = Some(e);
                false
            }
        }
    }
}

fn is_trial_failure(e: &AgentError) -> bool {
    matches!(e, AgentError::NonFinite(_) | AgentError::Hyper(_) | AgentError::Net(_) | AgentError::Tensor(_))
}

/// Trains on the training range, validating every `eval_interval`
/// environment steps; stops early per [`check_early_stop`] and keeps the
/// best-scoring network. Numerical failures give a `failed` record.
pub fn run_trial(ctx: &TrialCtx<'_>, trial_id: usize, params: Params, seed: u64) -> Result<TrialOutcome> {
    ctx.budget.validate()?;
    let mut record = TrialRecord::new(trial_id, ctx.algo, &ctx.net, ctx.no_llm, seed, params);
    let fail = |mut record: TrialRecord, e: &dyn std::fmt::Display| {
        log::warn!("trial {trial_id} failed: {e}");
        record.status = TrialStatus::Failed;
        record.message = Some(e.to_string());
        Ok(TrialOutcome { record, best: None })
    };
    let cfg = net_config(&ctx.net, &record.params)?;
    let model = match Network::<f64>::init(cfg, N_FEATURES, seed) {
        Ok(m) => m,
        Err(e) => return fail(record, &e),
    };
    let lookback = model.lookback();
    let windows = validation_windows(ctx, lookback)?;
    let env = EnvConfig { lookback, ..ctx.env };
    let tctx = TrainCtx {
        data: ctx.data,
        env,
        range: ctx.train.clone(),
        episode_len: ctx.budget.episode_len,
        normalize_rewards: ctx.normalize_rewards,
    };
    let hyper_json;
    let mut v = Validator {
        ctx,
        env,
        windows,
        best: None,
        error: None,
        last_eval: 0,
    };
    let outcome: std::result::Result<(TrainSummary, Network<f64>), AgentError> = match ctx.algo {
        Algo::Ddqn => {
            let h = ddqn_hyper(&record.params, ctx.budget.episode_len)?;
            hyper_json = serde_json::to_value(&h).expect("hyper serializes");
            let episodes = ctx.budget.episodes(ctx.budget.episode_len - 1);
            Ddqn::new(model, h, seed.wrapping_add(1)).and_then(|mut agent| {
                let mut call = |m: &Network<f64>, s: u64| Ok(v.eval(m, s, &mut record, true));
                let hook = EvalHook {
                    interval: ctx.budget.eval_interval,
                    call: &mut call,
                };
                let s = train_ddqn(&mut agent, &tctx, episodes, seed.wrapping_add(2), Some(hook))?;
                Ok((s, agent.online))
            })
        }
        Algo::Grpo => {
            let h = grpo_hyper(&record.params)?;
            hyper_json = serde_json::to_value(&h).expect("hyper serializes");
            let episodes = ctx.budget.episodes(h.group_size * (ctx.budget.episode_len - 1));
            Grpo::new(model, h, seed.wrapping_add(1)).and_then(|mut agent| {
                let mut call = |m: &Network<f64>, s: u64| Ok(v.eval(m, s, &mut record, true));
                let hook = EvalHook {
                    interval: ctx.budget.eval_interval,
                    call: &mut call,
                };
                let s = train_grpo(&mut agent, &tctx, episodes, seed.wrapping_add(2), Some(hook))?;
                Ok((s, agent.policy))
            })
        }
    };
    if let Some(e) = v.error.take() {
        return Err(e.into());
    }
    let (summary, last) = match outcome {
        Ok(v) => v,
        Err(e) if is_trial_failure(&e) => return fail(record, &e),
        Err(e) => return Err(TunerError::Agent(e)),
    };
    record.env_steps = summary.env_steps;
    record.status = if summary.stopped_by_hook {
        TrialStatus::EarlyStopped
    } else {
        TrialStatus::Completed
    };
    if !summary.stopped_by_hook && summary.env_steps > v.last_eval {
        v.eval(&last, summary.env_steps, &mut record, false);
        if let Some(e) = v.error.take() {
            return Err(e.into());
        }
    }
    let best = v.best.map(|network| AgentCheckpoint {
        algo: ctx.algo,
        network,
        hyper: hyper_json,
        feature_mode: ctx.data.features.mode(),
        no_llm: ctx.no_llm,
        seed,
    });
    if let (Some(ck), Some(dir)) = (&best, &ctx.out_dir) {
        let rel = format!("checkpoints/trial_{trial_id:04}.json");
        ck.save(dir.join(&rel))?;
        record.checkpoint_ref = Some(rel);
    }
    Ok(TrialOutcome { record, best })
}

/// Seed of trial `id` in a study seeded with `seed`.
pub fn trial_seed(seed: u64, id: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(id as u64)
}

/// Runs `n_trials` sequential trials, appending each to `store`. Returns
/// the new records with their best checkpoints.
pub fn tune(ctx: &TrialCtx<'_>, store: &mut TrialStore, n_trials: usize, seed: u64) -> Result<Vec<TrialOutcome>> {
    let space = SearchSpace::for_config(ctx.algo, &ctx.net)?;
    let mut out = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let id = store.next_id();
        let history: Vec<TrialRecord> = store
            .records()
            .iter()
            .filter(|r| r.algo == ctx.algo && r.net == ctx.net && r.no_llm == ctx.no_llm && r.status != TrialStatus::Failed)
            .cloned()
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, id) ^ 0x5eed_7e57);
        let params = suggest(&space, &history, &mut rng);
        let outcome = run_trial(ctx, id, params, trial_seed(seed, id))?;
        log::info!(
            "trial {id} {:?}: best {:?} after {} evaluations",
            outcome.record.status,
            outcome.record.best_score,
            outcome.record.eval_history.len()
        );
        store.append(outcome.record.clone())?;
        out.push(outcome);
    }
    Ok(out)
}
