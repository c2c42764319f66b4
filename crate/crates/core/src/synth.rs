//! Deterministic synthetic markets and news used by tests, the bundled
//! fixtures and `selftest`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{AlignedFrame, Bar, NewsItem, MINUTE_MS, NEUTRAL_SCORE};
use crate::sentiment::{ChatBackend, TransportError};

/// 2020-01-01T00:00:00Z.
pub const EPOCH_MS: i64 = 1_577_836_800_000;

fn bar_between(ts: i64, open: f64, close: f64, wick: f64, volume: f64) -> Bar {
    Bar {
        ts,
        open,
        high: open.max(close) * (1.0 + wick),
        low: open.min(close) * (1.0 - wick),
        close,
        volume,
    }
}

/// Gapless geometric random walk: every bar opens at the previous close.
pub fn random_walk_bars(n: usize, start: f64, vol: f64, seed: u64) -> Vec<Bar> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::new(0.0, vol).expect("finite volatility");
    let mut close = start;
    (0..n)
        .map(|i| {
            let open = close;
            close = open * f64::exp(step.sample(&mut rng));
            let wick = rng.random::<f64>() * vol;
            let volume = 1.0 + 20.0 * rng.random::<f64>();
            bar_between(EPOCH_MS + i as i64 * MINUTE_MS, open, close, wick, volume)
        })
        .collect()
}

/// Deterministic `start * exp(drift * t + amp * sin(2 pi t / period))`
/// closes, gapless and without wicks.
pub fn drift_sine_bars(n: usize, start: f64, drift: f64, amp: f64, period: f64) -> Vec<Bar> {
    let price = |t: f64| start * f64::exp(drift * t + amp * (std::f64::consts::TAU * t / period).sin());
    (0..n)
        .map(|i| {
            let close = price(i as f64);
            let open = if i == 0 { close } else { price(i as f64 - 1.0) };
            let volume = 10.0;
            bar_between(EPOCH_MS + i as i64 * MINUTE_MS, open, close, 0.0, volume)
        })
        .collect()
}

/// Bars with neutral scores.
pub fn neutral_frames(bars: &[Bar]) -> Vec<AlignedFrame> {
    bars.iter()
        .map(|&bar| AlignedFrame {
            bar,
            sentiment: NEUTRAL_SCORE,
            risk: NEUTRAL_SCORE,
        })
        .collect()
}

const SUBJECTS: [&str; 6] = ["Bitcoin", "BTC", "Crypto markets", "Major exchange", "Regulators", "Institutional desk"];

/// Headline fragments with the scores the keyword responder assigns.
const EVENTS: [(&str, u8, u8); 10] = [
    ("surges past resistance as buyers return", 5, 2),
    ("extends steady gains on strong inflows", 4, 2),
    ("approves long-awaited spot fund", 5, 3),
    ("trades sideways in a quiet session", 3, 1),
    ("faces fresh scrutiny over compliance", 2, 4),
    ("slides after large holder sells", 2, 3),
    ("plunges as liquidations cascade", 1, 5),
    ("reports security breach, withdrawals halted", 1, 5),
    ("volatility jumps ahead of policy decision", 3, 4),
    ("adoption grows among payment firms", 4, 1),
];

/// `count` news items spread over `[start_ts, end_ts)`, with short bodies.
pub fn synthetic_news(start_ts: i64, end_ts: i64, count: usize, seed: u64) -> Vec<NewsItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items: Vec<NewsItem> = (0..count)
        .map(|k| {
            let ts = rng.random_range(start_ts..end_ts);
            let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
            let (event, _, _) = EVENTS[rng.random_range(0..EVENTS.len())];
            let title = format!("{subject} {event} (#{k})");
            let body = format!(
                "{subject} {event}. Analysts said the move reflects positioning into the close, \
                 with traders watching funding rates and spot volumes over the next sessions."
            );
            NewsItem::new(ts, title, body)
        })
        .collect();
    items.sort_by_key(|n| n.ts);
    items
}

/// Scores a headline from its known event phrase; unknown text is neutral.
pub fn keyword_scores(title: &str) -> (u8, u8) {
    EVENTS
        .iter()
        .find(|(phrase, _, _)| title.contains(phrase))
        .map_or((NEUTRAL_SCORE, NEUTRAL_SCORE), |&(_, s, r)| (s, r))
}

/// Deterministic chat backend that answers a scoring prompt from the
/// headline keywords; used to record fixture responses.
#[derive(Clone, Debug, Default)]
pub struct KeywordResponder;

impl KeywordResponder {
    pub fn answer(prompt: &str) -> String {
        let mut out = String::from("Scores for the news items:\n```\n");
        for line in prompt.lines() {
            let Some((idx, title)) = line.split_once(". Title: ") else { continue };
            if !idx.is_empty() && idx.chars().all(|c| c.is_ascii_digit()) {
                let (s, r) = keyword_scores(title);
                out.push_str(&format!("{idx}: sentiment={s}, risk={r}\n"));
            }
        }
        out.push_str("```\n");
        out
    }
}

impl ChatBackend for KeywordResponder {
    fn model_id(&self) -> &str {
        "keyword-responder"
    }

    fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        Ok(Self::answer(prompt))
    }
}

/// Rounds to `1 / per_unit` (dividing keeps the shortest decimal form).
fn round_to(x: f64, per_unit: f64) -> f64 {
    (x * per_unit).round() / per_unit
}

/// Minute bars whose drift and volatility follow the most recent headline:
/// positive sentiment pushes prices up for about two hours, risk widens
/// the noise. Prices are rounded to cents and bars stay gapless.
pub fn news_driven_market(n: usize, n_news: usize, start: f64, seed: u64) -> (Vec<Bar>, Vec<NewsItem>) {
    let end_ts = EPOCH_MS + n as i64 * MINUTE_MS;
    let news = synthetic_news(EPOCH_MS, end_ts, n_news, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d61_726b_6574);
    let mut close = round_to(start, 100.0);
    let mut next = 0;
    let mut latest: Option<(i64, u8, u8)> = None;
    let bars = (0..n)
        .map(|i| {
            let ts = EPOCH_MS + i as i64 * MINUTE_MS;
            while next < news.len() && news[next].ts <= ts {
                let (s, r) = keyword_scores(&news[next].title);
                latest = Some((news[next].ts, s, r));
                next += 1;
            }
            let (mu, sigma) = match latest {
                Some((t, s, r)) => {
                    let age = (ts - t) as f64 / MINUTE_MS as f64;
                    (4e-4 * (f64::from(s) - 3.0) * (-age / 120.0).exp(), 4e-4 * (1.0 + 0.5 * f64::from(r - 1)))
                }
                None => (0.0, 4e-4),
            };
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let open = close;
            close = round_to(open * (mu + sigma * z).exp(), 100.0);
            let wick = rng.random::<f64>() * sigma;
            let high = round_to(open.max(close) * (1.0 + wick), 100.0);
            let low = round_to(open.min(close) * (1.0 - wick), 100.0);
            let volume = round_to(1.0 + 20.0 * rng.random::<f64>() * sigma / 4e-4, 1000.0);
            Bar {
                ts,
                open,
                high,
                low,
                close,
                volume,
            }
        })
        .collect();
    (bars, news)
}
