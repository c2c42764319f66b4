use super::{Action, EnvConfig, EnvError, Result, POSITION_SIZE};
use crate::data::{EpisodeWindow, MarketData};

/// Result of recomputing an episode from scratch.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub rewards: Vec<f64>,
    /// `window.length` points, starting at the initial equity.
    pub equity: Vec<f64>,
    pub final_equity: f64,
}

/// Independent ledger simulation of an episode: holds a signed BTC
/// quantity and a USDT cash balance, and values the account at each close.
/// Used as the accounting oracle for [`super::TradingEnv`].
pub fn replay_equity(data: &MarketData, window: EpisodeWindow, actions: &[Action], cfg: &EnvConfig) -> Result<Replay> {
    let steps = window.length.saturating_sub(1);
    if actions.len() != steps {
        return Err(EnvError::ActionCount {
            expected: steps,
            got: actions.len(),
        });
    }
    if window.end() > data.len() {
        return Err(EnvError::OutOfData {
            start: window.start,
            end: window.end(),
            len: data.len(),
        });
    }
    let fee = |px: f64| cfg.fee_bps * 1e-4 * px * POSITION_SIZE;
    let mut qty = 0.0_f64;
    let mut entry = 0.0_f64;
    let mut cash = 0.0_f64;
    let mut value = 0.0_f64;
    let mut rewards = Vec::with_capacity(steps);
    let mut equity = Vec::with_capacity(window.length);
    equity.push(cfg.initial_equity);

    for (k, &a) in actions.iter().enumerate() {
        let t = window.start + k;
        let px = data.frames[t].bar.close;
        let want = match a {
            Action::Short => -POSITION_SIZE,
            Action::Long => POSITION_SIZE,
            Action::Hold => qty,
        };
        if want != qty {
            if qty != 0.0 {
                cash += qty * px - fee(px);
            }
            if want != 0.0 {
                cash -= want * px + fee(px);
                entry = px;
            }
            qty = want;
        }

        let bar = data.frames[t + 1].bar;
        if let (Some(th), true) = (cfg.sltp, qty != 0.0) {
            let long = qty > 0.0;
            let stop = if long { entry * (1.0 - th) } else { entry * (1.0 + th) };
            let take = if long { entry * (1.0 + th) } else { entry * (1.0 - th) };
            let stopped = if long { bar.low <= stop } else { bar.high >= stop };
            let taken = if long { bar.high >= take } else { bar.low <= take };
            let exit = if stopped {
                Some(stop)
            } else if taken {
                Some(take)
            } else {
                None
            };
            if let Some(px) = exit {
                cash += qty * px - fee(px);
                qty = 0.0;
            }
        }
        if k + 1 == steps && qty != 0.0 {
            cash += qty * bar.close - fee(bar.close);
            qty = 0.0;
        }
        let v = cash + qty * bar.close;
        rewards.push(v - value);
        value = v;
        equity.push(cfg.initial_equity + v);
    }
    Ok(Replay {
        final_equity: cfg.initial_equity + value,
        rewards,
        equity,
    })
}
