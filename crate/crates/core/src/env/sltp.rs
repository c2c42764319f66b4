use super::{FillReason, Position, Side};
use crate::data::Bar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SltpFill {
    pub price: f64,
    pub reason: FillReason,
}

/// Forced exit if `bar` touches the stop-loss or take-profit level of
/// `position`. When both are touched the stop-loss wins. Fills happen at
/// the level itself.
pub fn apply_sltp(position: &Position, bar: &Bar, threshold: f64) -> Option<SltpFill> {
    let e = position.entry_price;
    let (sl, tp, sl_hit, tp_hit) = match position.side {
        Side::Flat => return None,
        Side::Long => {
            let (sl, tp) = (e * (1.0 - threshold), e * (1.0 + threshold));
            (sl, tp, bar.low <= sl, bar.high >= tp)
        }
        Side::Short => {
            let (sl, tp) = (e * (1.0 + threshold), e * (1.0 - threshold));
            (sl, tp, bar.high >= sl, bar.low <= tp)
        }
    };
    if sl_hit {
        Some(SltpFill {
            price: sl,
            reason: FillReason::StopLoss,
        })
    } else if tp_hit {
        Some(SltpFill {
            price: tp,
            reason: FillReason::TakeProfit,
        })
    } else {
        None
    }
}
