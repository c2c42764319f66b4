use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{AlignedFrame, Bar, DataError, NewsItem, Result, NEUTRAL_SCORE};
use crate::sentiment::ScoredNews;

/// A score pair stamped with its news timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimedScore {
    pub ts: i64,
    pub sentiment: u8,
    pub risk: u8,
}

/// Joins scores to their news timestamps, ordered by time. News without a
/// score is skipped.
pub fn score_timeline(news: &[NewsItem], scored: &[ScoredNews]) -> Vec<TimedScore> {
    let by_id: HashMap<&str, &ScoredNews> = scored.iter().map(|s| (s.news_id.as_str(), s)).collect();
    let mut out: Vec<TimedScore> = news
        .iter()
        .filter_map(|n| {
            by_id.get(n.id.as_str()).map(|s| TimedScore {
                ts: n.ts,
                sentiment: s.sentiment,
                risk: s.risk,
            })
        })
        .collect();
    out.sort_by_key(|s| s.ts);
    out
}

/// Carries the most recent score with `news.ts <= bar.ts` onto every bar.
/// Among equal news timestamps the later entry wins.
pub fn forward_fill_scores(bars: &[Bar], timeline: &[TimedScore]) -> Vec<AlignedFrame> {
    let mut sorted = timeline.to_vec();
    sorted.sort_by_key(|s| s.ts);
    let mut current = (NEUTRAL_SCORE, NEUTRAL_SCORE);
    let mut next = 0;
    bars.iter()
        .map(|bar| {
            while next < sorted.len() && sorted[next].ts <= bar.ts {
                current = (sorted[next].sentiment, sorted[next].risk);
                next += 1;
            }
            AlignedFrame {
                bar: *bar,
                sentiment: current.0,
                risk: current.1,
            }
        })
        .collect()
}

/// Audit export: `ts,open,high,low,close,volume,sentiment,risk`.
pub fn write_aligned_csv(frames: &[AlignedFrame], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "ts,open,high,low,close,volume,sentiment,risk")?;
    for f in frames {
        let b = &f.bar;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            b.ts, b.open, b.high, b.low, b.close, b.volume, f.sentiment, f.risk
        )?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct Row {
    ts: i64,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
    sentiment: u8,
    risk: u8,
}

/// Reads the CSV written by [`write_aligned_csv`]; timestamps must be
/// strictly increasing and scores within 1..=5.
pub fn parse_aligned_csv(reader: impl Read) -> Result<Vec<AlignedFrame>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<AlignedFrame> = Vec::new();
    for rec in rdr.deserialize::<Row>() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = out.len() as u64 + 2;
        let bar = Bar {
            ts: rec.ts,
            open: rec.open,
            high: rec.high,
            low: rec.low,
            close: rec.close,
            volume: rec.volume,
        };
        bar.check().map_err(|msg| DataError::Invariant { line, msg })?;
        if !(1..=5).contains(&rec.sentiment) || !(1..=5).contains(&rec.risk) {
            return Err(DataError::Invariant {
                line,
                msg: format!("scores ({}, {}) outside 1..=5", rec.sentiment, rec.risk),
            });
        }
        if out.last().is_some_and(|f| f.bar.ts >= bar.ts) {
            return Err(DataError::Invariant {
                line,
                msg: format!("timestamp {} not after the previous row", bar.ts),
            });
        }
        out.push(AlignedFrame {
            bar,
            sentiment: rec.sentiment,
            risk: rec.risk,
        });
    }
    Ok(out)
}

pub fn load_aligned(path: impl AsRef<Path>) -> Result<Vec<AlignedFrame>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_aligned_csv(file)
}
