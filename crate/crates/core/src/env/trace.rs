use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Action, FillReason, Side, StepOutcome};

/// One audited environment step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub ts: i64,
    pub action: Action,
    pub side: Side,
    pub fill_price: Option<f64>,
    pub reward: f64,
    pub equity: f64,
    pub sltp: Option<FillReason>,
}

impl TraceRow {
    /// `side` and `equity` are the values after the step.
    pub fn new(step: usize, ts: i64, action: Action, side: Side, equity: f64, out: &StepOutcome) -> Self {
        let sltp = out
            .fills
            .iter()
            .find(|f| matches!(f.reason, FillReason::StopLoss | FillReason::TakeProfit))
            .map(|f| f.reason);
        Self {
            step,
            ts,
            action,
            side,
            fill_price: out.fills.last().map(|f| f.price),
            reward: out.reward,
            equity,
            sltp,
        }
    }
}

pub fn write_trace_csv(rows: &[TraceRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,ts,action,side,fill_price,reward,equity,sltp")?;
    for r in rows {
        let fill = r.fill_price.map(|p| p.to_string()).unwrap_or_default();
        let sltp = match r.sltp {
            Some(FillReason::StopLoss) => "sl",
            Some(FillReason::TakeProfit) => "tp",
            _ => "",
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.ts,
            r.action.name(),
            r.side.name(),
            fill,
            r.reward,
            r.equity,
            sltp
        )?;
    }
    Ok(())
}
