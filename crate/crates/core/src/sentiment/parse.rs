use std::sync::OnceLock;

use regex::Regex;

use super::{MAX_SCORE, MIN_SCORE};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Count { expected: usize, got: usize },
    NotInteger,
    OutOfRange,
    BadIndex,
    DuplicateIndex,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at `{line}`")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: String,
}

fn score_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^[\s>*#`-]*(\d+)\s*[:.)]\s*sentiment\s*=\s*([^,\s]*)\s*,\s*risk\s*=\s*(\S*)\s*$")
            .expect("valid regex")
    })
}

type Pair = (u8, u8);

fn parse_value(raw: &str, line: &str) -> Result<u8, ParseError> {
    let v: i64 = raw.parse().map_err(|_| ParseError {
        kind: ParseErrorKind::NotInteger,
        line: line.to_string(),
    })?;
    if v < i64::from(MIN_SCORE) || v > i64::from(MAX_SCORE) {
        return Err(ParseError {
            kind: ParseErrorKind::OutOfRange,
            line: line.to_string(),
        });
    }
    Ok(v as u8)
}

/// Per-index results; lines that are not score lines are skipped.
fn scan(text: &str, expected: usize) -> (Vec<Option<Pair>>, Option<ParseError>, usize) {
    let mut out = vec![None; expected];
    let mut first_err = None;
    let mut seen = 0;
    for raw in text.lines() {
        let line = raw.trim();
        let Some(cap) = score_line().captures(line) else { continue };
        seen += 1;
        let res = (|| {
            let idx: usize = cap[1].parse().map_err(|_| ParseError {
                kind: ParseErrorKind::BadIndex,
                line: line.to_string(),
            })?;
            if idx == 0 || idx > expected {
                return Err(ParseError {
                    kind: ParseErrorKind::BadIndex,
                    line: line.to_string(),
                });
            }
            let pair = (parse_value(&cap[2], line)?, parse_value(&cap[3], line)?);
            Ok((idx, pair))
        })();
        match res {
            Ok((idx, pair)) => {
                if out[idx - 1].is_some() {
                    first_err.get_or_insert(ParseError {
                        kind: ParseErrorKind::DuplicateIndex,
                        line: line.to_string(),
                    });
                } else {
                    out[idx - 1] = Some(pair);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    (out, first_err, seen)
}

/// Extracts exactly `expected` `(sentiment, risk)` pairs from lines shaped
/// `<index>: sentiment=<s>, risk=<r>`, ignoring surrounding prose and code
/// fences. Results are ordered by index.
pub fn parse_scores(text: &str, expected: usize) -> Result<Vec<Pair>, ParseError> {
    let (out, err, seen) = scan(text, expected);
    if let Some(e) = err {
        return Err(e);
    }
    if seen != expected || out.iter().any(Option::is_none) {
        return Err(ParseError {
            kind: ParseErrorKind::Count { expected, got: seen },
            line: text.lines().last().unwrap_or_default().to_string(),
        });
    }
    Ok(out.into_iter().map(|p| p.expect("checked above")).collect())
}

/// Like [`parse_scores`] but keeps whatever valid lines it finds.
pub fn parse_scores_lenient(text: &str, expected: usize) -> Vec<Option<Pair>> {
    scan(text, expected).0
}
