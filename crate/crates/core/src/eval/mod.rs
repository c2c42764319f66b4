//! Sampled-period evaluation, top-k averaging, full-period backtests, the
//! buy-and-hold baseline and report files.

mod report;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{run_greedy_episode, AgentCheckpoint, AgentError};
use crate::data::{sample_windows, DataError, EpisodeWindow, MarketData, SplitTag};
use crate::env::{replay_equity, EnvConfig, EnvError, Side, TradingEnv};
use crate::nn::Model;

pub use report::{emit_report, NamedCurve, Report, ReportRow, TABLE_HEADER, TABLE_ROWS};

pub const DEFAULT_EVAL_SEED: u64 = 7;
pub const PROTOCOL_PERIODS: usize = 256;
pub const PROTOCOL_LENGTH: usize = 3000;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("checkpoint expects {expected:?} features but the data was built with {got:?}")]
    FeatureMode {
        expected: crate::data::FeatureMode,
        got: crate::data::FeatureMode,
    },
    #[error("need at least {need} ranked trials, have {have}")]
    NotEnoughTrials { need: usize, have: usize },
    #[error("window {start}..{end} leaves the evaluation range {range:?}")]
    Leak { start: usize, end: usize, range: Range<usize> },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodResult {
    pub window_id: usize,
    pub start: usize,
    pub length: usize,
    pub cumulative_return_usdt: f64,
    /// Relative to an initial equity of the window's first close.
    pub pct_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub mean_usdt: f64,
    pub mean_pct: f64,
    pub results: Vec<PeriodResult>,
}

impl PeriodSummary {
    fn from_results(results: Vec<PeriodResult>) -> Self {
        let n = results.len().max(1) as f64;
        Self {
            mean_usdt: results.iter().map(|r| r.cumulative_return_usdt).sum::<f64>() / n,
            mean_pct: results.iter().map(|r| r.pct_return).sum::<f64>() / n,
            results,
        }
    }
}

/// Greedy policy over each window, in parallel. Window figures come from
/// the replay ledger applied to the greedy actions.
pub fn evaluate_windows<M: Model<f64>>(
    model: &M,
    data: &MarketData,
    env: &EnvConfig,
    windows: &[EpisodeWindow],
) -> Result<Vec<PeriodResult>> {
    let cfg = EnvConfig {
        lookback: model.lookback(),
        initial_equity: 0.0,
        ..*env
    };
    windows
        .par_iter()
        .enumerate()
        .map(|(id, &w)| {
            let mut e = TradingEnv::new(data, cfg)?;
            let (actions, _) = run_greedy_episode(model, &mut e, w, None)?;
            let rep = replay_equity(data, w, &actions, &cfg)?;
            Ok(PeriodResult {
                window_id: id,
                start: w.start,
                length: w.length,
                cumulative_return_usdt: rep.final_equity,
                pct_return: rep.final_equity / data.close(w.start),
            })
        })
        .collect()
}

/// Rejects checkpoints built for a different feature representation.
pub fn check_features(ck: &AgentCheckpoint, data: &MarketData) -> Result<()> {
    if ck.feature_mode != data.features.mode() {
        return Err(EvalError::FeatureMode {
            expected: ck.feature_mode,
            got: data.features.mode(),
        });
    }
    Ok(())
}

/// Mean return over `count` windows of `length` minutes sampled from
/// `range` with `seed`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_periods<M: Model<f64>>(
    model: &M,
    data: &MarketData,
    env: &EnvConfig,
    range: Range<usize>,
    tag: SplitTag,
    count: usize,
    length: usize,
    seed: u64,
) -> Result<PeriodSummary> {
    let windows = sample_windows(range.clone(), tag, length, model.lookback(), count, seed)?;
    for w in &windows {
        if w.start < range.start + model.lookback() || w.end() > range.end {
            return Err(EvalError::Leak {
                start: w.start,
                end: w.end(),
                range,
            });
        }
    }
    Ok(PeriodSummary::from_results(evaluate_windows(model, data, env, &windows)?))
}

/// Average of `metric` over the first `k` entries of `ranked`.
pub fn topk_average<T>(ranked: &[T], k: usize, metric: impl Fn(&T) -> Result<f64> + Sync + Send) -> Result<(f64, Vec<f64>)>
where
    T: Sync,
{
    if ranked.len() < k || k == 0 {
        return Err(EvalError::NotEnoughTrials {
            need: k.max(1),
            have: ranked.len(),
        });
    }
    let vals = ranked[..k].par_iter().map(metric).collect::<Result<Vec<_>>>()?;
    Ok((vals.iter().sum::<f64>() / k as f64, vals))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub ts: i64,
    pub equity: f64,
    pub side: Side,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestCurve {
    pub initial_equity: f64,
    pub points: Vec<CurvePoint>,
    pub pct_return: f64,
}

/// One continuous greedy episode over `range` starting from an equity of
/// the first close. Early observations repeat the first row of the range.
pub fn full_backtest<M: Model<f64>>(model: &M, data: &MarketData, env: &EnvConfig, range: Range<usize>) -> Result<BacktestCurve> {
    let initial = data.close(range.start);
    let cfg = EnvConfig {
        lookback: model.lookback(),
        initial_equity: initial,
        ..*env
    };
    let window = EpisodeWindow {
        start: range.start,
        length: range.len(),
        split: SplitTag::Test,
    };
    let mut e = TradingEnv::new(data, cfg)?;
    let mut obs = e.reset_padded(window, range.start)?;
    let mut points = Vec::with_capacity(range.len());
    points.push(CurvePoint {
        ts: data.frames[range.start].ts(),
        equity: initial,
        side: Side::Flat,
    });
    loop {
        let a = crate::agents::greedy_action(model, &obs)?;
        let out = e.step(crate::env::Action::ALL[a])?;
        points.push(CurvePoint {
            ts: data.frames[e.cursor()].ts(),
            equity: e.equity(),
            side: e.position().side,
        });
        obs = out.observation;
        if out.done {
            break;
        }
    }
    Ok(BacktestCurve {
        initial_equity: initial,
        pct_return: e.equity() / initial - 1.0,
        points,
    })
}

/// `close_last / close_first - 1` over `range`.
pub fn baseline_buy_hold(data: &MarketData, range: Range<usize>) -> f64 {
    data.close(range.end - 1) / data.close(range.start) - 1.0
}

/// Pointwise mean of equally long curves (for top-k panels).
pub fn average_curves(curves: &[BacktestCurve]) -> Vec<(i64, f64)> {
    let Some(first) = curves.first() else { return Vec::new() };
    let n = curves.len() as f64;
    (0..first.points.len())
        .map(|i| (first.points[i].ts, curves.iter().map(|c| c.points[i].equity).sum::<f64>() / n))
        .collect()
}
