//! Minute-bar trading simulator: one BTC of target-position exposure,
//! intrabar stop-loss / take-profit, and mark-to-market rewards in USDT.

mod replay;
mod sltp;
mod trace;

use serde::{Deserialize, Serialize};

use crate::data::{EpisodeWindow, MarketData};
use crate::Tensor;

pub use replay::{replay_equity, Replay};
pub use sltp::{apply_sltp, SltpFill};
pub use trace::{write_trace_csv, TraceRow};

pub const DEFAULT_SLTP: f64 = 0.001;
/// Exposure per position, in BTC.
pub const POSITION_SIZE: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("episode window {start}..{end} is outside the {len} available frames")]
    OutOfData { start: usize, end: usize, len: usize },
    #[error("window starting at {start} needs {lookback} preceding frames above index {floor}")]
    Lookback { start: usize, lookback: usize, floor: usize },
    #[error("episode windows need at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("step called after the episode finished")]
    Done,
    #[error("step called before reset")]
    NotReset,
    #[error("action sequence has {got} entries, the window has {expected} steps")]
    ActionCount { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Short = 0,
    Long = 1,
    Hold = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Short, Action::Long, Action::Hold];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Short => "short",
            Action::Long => "long",
            Action::Hold => "hold",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    #[default]
    Flat,
    Long,
    Short,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Flat => 0.0,
            Side::Long => 1.0,
            Side::Short => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Flat => "flat",
            Side::Long => "long",
            Side::Short => "short",
        }
    }

    /// Side the agent wants after `action`.
    pub fn target(self, action: Action) -> Side {
        match action {
            Action::Short => Side::Short,
            Action::Long => Side::Long,
            Action::Hold => self,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub side: Side,
    /// Zero when flat.
    pub entry_price: f64,
}

impl Position {
    pub fn is_flat(&self) -> bool {
        self.side == Side::Flat
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub lookback: usize,
    pub initial_equity: f64,
    /// Stop-loss / take-profit distance as a fraction of entry; `None`
    /// disables both.
    pub sltp: Option<f64>,
    /// Fee per fill in basis points of notional.
    pub fee_bps: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            lookback: 1,
            initial_equity: 0.0,
            sltp: Some(DEFAULT_SLTP),
            fee_bps: 0.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(EnvError::Config("lookback must be at least 1".into()));
        }
        if let Some(t) = self.sltp {
            if !(t > 0.0 && t < 1.0) {
                return Err(EnvError::Config(format!("sltp threshold must lie in (0, 1), got {t}")));
            }
        }
        if !(self.fee_bps >= 0.0 && self.fee_bps.is_finite()) {
            return Err(EnvError::Config(format!("fee_bps must be non-negative, got {}", self.fee_bps)));
        }
        if !self.initial_equity.is_finite() {
            return Err(EnvError::Config("initial equity must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillReason {
    Agent,
    StopLoss,
    TakeProfit,
    EpisodeEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub price: f64,
    pub from: Side,
    pub to: Side,
    pub reason: FillReason,
}

/// A closed round trip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub side: Side,
    pub entry: f64,
    pub exit: f64,
    /// Price PnL before fees.
    pub pnl: f64,
    pub reason: FillReason,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Observation at the new cursor (`lookback x F`).
    pub observation: Tensor,
    pub reward: f64,
    pub done: bool,
    pub fills: Vec<Fill>,
    pub sltp_triggered: bool,
}

/// One episode over an [`EpisodeWindow`]. Cheap to clone; many instances
/// can share the same [`MarketData`].
#[derive(Clone, Debug)]
pub struct TradingEnv<'a> {
    data: &'a MarketData,
    config: EnvConfig,
    window: Option<EpisodeWindow>,
    floor: usize,
    anchor: f64,
    cursor: usize,
    position: Position,
    /// Cash relative to the initial equity.
    cash: f64,
    /// `cash + position * close`, i.e. equity minus initial equity.
    mark: f64,
    fees: f64,
    done: bool,
    trades: Vec<Trade>,
}

impl<'a> TradingEnv<'a> {
    pub fn new(data: &'a MarketData, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            data,
            config,
            window: None,
            floor: 0,
            anchor: 1.0,
            cursor: 0,
            position: Position::default(),
            cash: 0.0,
            mark: 0.0,
            fees: 0.0,
            done: false,
            trades: Vec::new(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn data(&self) -> &'a MarketData {
        self.data
    }

    /// Starts an episode; the window must have `lookback - 1` earlier frames
    /// in the data so the first observation is fully populated.
    pub fn reset(&mut self, window: EpisodeWindow) -> Result<Tensor> {
        let need = self.config.lookback - 1;
        if window.start < need {
            return Err(EnvError::Lookback {
                start: window.start,
                lookback: self.config.lookback,
                floor: 0,
            });
        }
        self.reset_padded(window, window.start - need)
    }

    /// Starts an episode whose observations never read rows below `floor`;
    /// missing history repeats the row at `floor`.
    pub fn reset_padded(&mut self, window: EpisodeWindow, floor: usize) -> Result<Tensor> {
        if window.length < 2 {
            return Err(EnvError::TooShort(window.length));
        }
        if window.end() > self.data.len() {
            return Err(EnvError::OutOfData {
                start: window.start,
                end: window.end(),
                len: self.data.len(),
            });
        }
        if floor > window.start {
            return Err(EnvError::Lookback {
                start: window.start,
                lookback: self.config.lookback,
                floor,
            });
        }
        self.window = Some(window);
        self.floor = floor;
        self.anchor = self.data.close(window.start);
        self.cursor = window.start;
        self.position = Position::default();
        self.cash = 0.0;
        self.mark = 0.0;
        self.fees = 0.0;
        self.done = false;
        self.trades.clear();
        Ok(self.observation())
    }

    pub fn observation(&self) -> Tensor {
        self.data
            .features
            .window(self.cursor, self.config.lookback, self.floor, self.anchor)
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn position(&self) -> Position {
        self.position
    }

    pub fn equity(&self) -> f64 {
        self.config.initial_equity + self.mark
    }

    /// Realized PnL net of fees.
    pub fn realized(&self) -> f64 {
        self.cash + self.position.side.sign() * POSITION_SIZE * self.position.entry_price
    }

    pub fn fees_paid(&self) -> f64 {
        self.fees
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trades(&self) -> &[Trade] {
        &self.trades
    }

    pub fn window(&self) -> Option<EpisodeWindow> {
        self.window
    }

    fn fee(&self, price: f64) -> f64 {
        self.config.fee_bps * 1e-4 * price * POSITION_SIZE
    }

    fn close_position(&mut self, price: f64, reason: FillReason, to: Side, fills: &mut Vec<Fill>) {
        let p = self.position;
        let q = p.side.sign() * POSITION_SIZE;
        let fee = self.fee(price);
        self.cash += q * price - fee;
        self.fees += fee;
        self.trades.push(Trade {
            side: p.side,
            entry: p.entry_price,
            exit: price,
            pnl: q * (price - p.entry_price),
            reason,
        });
        fills.push(Fill {
            price,
            from: p.side,
            to,
            reason,
        });
        self.position = Position::default();
    }

    fn open_position(&mut self, side: Side, price: f64, fills: &mut Vec<Fill>) {
        let fee = self.fee(price);
        self.cash -= side.sign() * POSITION_SIZE * price + fee;
        self.fees += fee;
        self.position = Position {
            side,
            entry_price: price,
        };
        fills.push(Fill {
            price,
            from: Side::Flat,
            to: side,
            reason: FillReason::Agent,
        });
    }

    /// Applies `action` at the current close, advances one frame, checks
    /// stop-loss / take-profit on the new bar, and marks to its close.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let window = self.window.ok_or(EnvError::NotReset)?;
        if self.done {
            return Err(EnvError::Done);
        }
        let mut fills = Vec::new();
        let price = self.data.close(self.cursor);
        let target = self.position.side.target(action);
        if target != self.position.side {
            if !self.position.is_flat() {
                self.close_position(price, FillReason::Agent, target, &mut fills);
            }
            if target != Side::Flat {
                self.open_position(target, price, &mut fills);
            }
        }

        self.cursor += 1;
        let bar = self.data.frames[self.cursor].bar;
        let mut sltp_triggered = false;
        if let Some(threshold) = self.config.sltp {
            if let Some(hit) = apply_sltp(&self.position, &bar, threshold) {
                self.close_position(hit.price, hit.reason, Side::Flat, &mut fills);
                sltp_triggered = true;
            }
        }
        if self.cursor == window.last() {
            self.done = true;
            if !self.position.is_flat() {
                self.close_position(bar.close, FillReason::EpisodeEnd, Side::Flat, &mut fills);
            }
        }
        let mark = self.cash + self.position.side.sign() * POSITION_SIZE * bar.close;
        let reward = mark - self.mark;
        self.mark = mark;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
            fills,
            sltp_triggered,
        })
    }
}

#[cfg(test)]
mod tests;
