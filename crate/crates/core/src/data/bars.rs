use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use super::{Bar, DataError, Result, MINUTE_MS};

const HEADER: [&str; 6] = ["ts", "open", "high", "low", "close", "volume"];

#[derive(Clone, Debug, PartialEq)]
pub struct BarSeries {
    pub bars: Vec<Bar>,
    /// Minutes absent between the first and last bar.
    pub missing_minutes: u64,
}

#[derive(Deserialize)]
struct Row {
    ts: i64,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

pub fn load_bars(path: impl AsRef<Path>) -> Result<BarSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_bars(file)
}

/// Reads a `ts,open,high,low,close,volume` CSV; rows may arrive in any order.
pub fn parse_bars(reader: impl Read) -> Result<BarSeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| DataError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("expected header `{}`", HEADER.join(",")),
        });
    }
    let mut rows: Vec<(u64, Bar)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: Row = rec.deserialize(None).map_err(|e| DataError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let bar = Bar {
            ts: row.ts,
            open: row.open,
            high: row.high,
            low: row.low,
            close: row.close,
            volume: row.volume,
        };
        bar.check().map_err(|msg| DataError::Invariant { line, msg })?;
        rows.push((line, bar));
    }
    rows.sort_by_key(|(_, b)| b.ts);
    for pair in rows.windows(2) {
        if pair[0].1.ts == pair[1].1.ts {
            return Err(DataError::Duplicate {
                line: pair[0].0.max(pair[1].0),
                ts: pair[1].1.ts,
            });
        }
    }
    let bars: Vec<Bar> = rows.into_iter().map(|(_, b)| b).collect();
    let missing_minutes = bars
        .windows(2)
        .map(|p| ((p[1].ts - p[0].ts) / MINUTE_MS - 1) as u64)
        .sum();
    if missing_minutes > 0 {
        log::info!("bar series has {missing_minutes} missing minutes");
    }
    Ok(BarSeries { bars, missing_minutes })
}

pub fn write_bars_csv(bars: &[Bar], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", HEADER.join(","))?;
    for b in bars {
        writeln!(out, "{},{},{},{},{},{}", b.ts, b.open, b.high, b.low, b.close, b.volume)?;
    }
    Ok(())
}
