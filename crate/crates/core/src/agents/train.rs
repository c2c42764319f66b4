use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{greedy_action, Ddqn, Grpo, Result, Transition};
use crate::data::{EpisodeWindow, MarketData, SplitTag};
use crate::env::{Action, EnvConfig, EnvError, TradingEnv};
use crate::nn::Model;

/// Where and how agents train.
#[derive(Clone, Debug)]
pub struct TrainCtx<'a> {
    pub data: &'a MarketData,
    pub env: EnvConfig,
    /// Frames episodes may use (normally the training split).
    pub range: Range<usize>,
    pub episode_len: usize,
    /// Express rewards in per-mille of the episode's first close.
    pub normalize_rewards: bool,
}

impl TrainCtx<'_> {
    pub fn reward_scale(&self, window: &EpisodeWindow) -> f64 {
        if self.normalize_rewards {
            1000.0 / self.data.close(window.start)
        } else {
            1.0
        }
    }

    pub fn source(&self, seed: u64) -> EpisodeSource {
        EpisodeSource::new(self.range.clone(), self.episode_len, self.env.lookback, seed)
    }
}

/// Endless stream of uniformly placed training windows.
#[derive(Clone, Debug)]
pub struct EpisodeSource {
    lo: usize,
    hi: usize,
    length: usize,
    rng: ChaCha8Rng,
}

impl EpisodeSource {
    /// Starts leave `lookback` frames of history inside `range`.
    pub fn new(range: Range<usize>, length: usize, lookback: usize, seed: u64) -> Self {
        let lo = range.start + lookback;
        let hi = range.end.saturating_sub(length).max(lo);
        Self {
            lo,
            hi,
            length,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_window(&mut self) -> EpisodeWindow {
        EpisodeWindow {
            start: self.rng.random_range(self.lo..=self.hi),
            length: self.length,
            split: SplitTag::Train,
        }
    }
}

/// Called every `interval` environment steps with the current model and
/// step count; returning `false` ends training.
pub struct EvalHook<'h, M> {
    pub interval: u64,
    pub call: &'h mut dyn FnMut(&M, u64) -> Result<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSummary {
    pub episodes: usize,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub last_loss: Option<f64>,
    /// USDT return of each training episode (one per group for GRPO).
    pub episode_returns: Vec<f64>,
    pub stopped_by_hook: bool,
}

fn check_len(ctx: &TrainCtx<'_>) -> Result<()> {
    if ctx.range.len() < ctx.episode_len + ctx.env.lookback {
        return Err(EnvError::OutOfData {
            start: ctx.range.start,
            end: ctx.range.start + ctx.episode_len + ctx.env.lookback,
            len: ctx.range.end,
        }
        .into());
    }
    Ok(())
}

fn maybe_eval<M>(hook: &mut Option<EvalHook<'_, M>>, model: &M, steps: u64, next: &mut u64) -> Result<bool> {
    if let Some(h) = hook {
        if steps >= *next {
            while *next <= steps {
                *next += h.interval.max(1);
            }
            return (h.call)(model, steps);
        }
    }
    Ok(true)
}

/// Epsilon-greedy DDQN for `episodes` episodes. After every
/// `horizon_len` environment steps the agent runs
/// `ceil(horizon_len * repeat_times / batch_size)` gradient steps.
pub fn train_ddqn<M: Model<f64>>(
    agent: &mut Ddqn<M>,
    ctx: &TrainCtx<'_>,
    episodes: usize,
    seed: u64,
    mut hook: Option<EvalHook<'_, M>>,
) -> Result<TrainSummary> {
    check_len(ctx)?;
    let mut src = ctx.source(seed);
    let mut env = TradingEnv::new(ctx.data, ctx.env)?;
    let mut summary = TrainSummary::default();
    let mut since_update = 0;
    let mut next_eval = hook.as_ref().map_or(u64::MAX, |h| h.interval.max(1));
    'outer: for _ in 0..episodes {
        let window = src.next_window();
        let scale = ctx.reward_scale(&window);
        let mut obs = env.reset(window)?;
        loop {
            let a = agent.act(&obs)?;
            let out = env.step(Action::ALL[a])?;
            agent.observe(Transition {
                state: obs,
                action: a,
                reward: out.reward * scale,
                next_state: out.observation.clone(),
                done: out.done,
            });
            obs = out.observation;
            summary.env_steps += 1;
            since_update += 1;
            if since_update == agent.hyper.horizon_len {
                since_update = 0;
                for _ in 0..agent.hyper.updates_per_horizon() {
                    if let Some(l) = agent.update()? {
                        summary.last_loss = Some(l);
                    }
                }
            }
            if out.done {
                break;
            }
        }
        summary.episodes += 1;
        summary.episode_returns.push(env.equity() - ctx.env.initial_equity);
        if !maybe_eval(&mut hook, &agent.online, summary.env_steps, &mut next_eval)? {
            summary.stopped_by_hook = true;
            break 'outer;
        }
    }
    summary.grad_steps = agent.grad_steps;
    Ok(summary)
}

/// GRPO: each training episode collects one group of rollouts on a fresh
/// window and runs the clipped-surrogate epochs on it.
pub fn train_grpo<M: Model<f64>>(
    agent: &mut Grpo<M>,
    ctx: &TrainCtx<'_>,
    episodes: usize,
    seed: u64,
    mut hook: Option<EvalHook<'_, M>>,
) -> Result<TrainSummary> {
    check_len(ctx)?;
    let mut src = ctx.source(seed);
    let env = TradingEnv::new(ctx.data, ctx.env)?;
    let mut summary = TrainSummary::default();
    let mut next_eval = hook.as_ref().map_or(u64::MAX, |h| h.interval.max(1));
    for _ in 0..episodes {
        let window = src.next_window();
        let scale = ctx.reward_scale(&window);
        let group = agent.collect(&env, window, scale)?;
        let stats = agent.update(&group)?;
        summary.episodes += 1;
        summary.grad_steps += (stats.epochs * group.trajectories.len() * (window.length - 1)).div_ceil(agent.hyper.batch_size) as u64;
        summary.env_steps += (group.trajectories.len() * (window.length - 1)) as u64;
        summary.last_loss = Some(stats.loss);
        summary.episode_returns.push(group.returns.iter().sum::<f64>() / scale / group.returns.len() as f64);
        if !maybe_eval(&mut hook, &agent.policy, summary.env_steps, &mut next_eval)? {
            summary.stopped_by_hook = true;
            break;
        }
    }
    Ok(summary)
}

/// Greedy actions over one episode; observations below `floor` are edge
/// padded. Returns the actions and the per-step rewards.
pub fn run_greedy_episode<M: Model<f64>>(
    model: &M,
    env: &mut TradingEnv<'_>,
    window: EpisodeWindow,
    floor: Option<usize>,
) -> Result<(Vec<Action>, Vec<f64>)> {
    let mut obs = match floor {
        Some(f) => env.reset_padded(window, f)?,
        None => env.reset(window)?,
    };
    let mut actions = Vec::with_capacity(window.length);
    let mut rewards = Vec::with_capacity(window.length);
    loop {
        let a = Action::ALL[greedy_action(model, &obs)?];
        let out = env.step(a)?;
        actions.push(a);
        rewards.push(out.reward);
        obs = out.observation;
        if out.done {
            return Ok((actions, rewards));
        }
    }
}
