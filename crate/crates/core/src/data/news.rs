use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{DataError, NewsItem, Result};

/// Stable id: first 16 hex digits of SHA-256 over `ts` and `title`.
pub fn news_id(ts: i64, title: &str) -> String {
    let mut h = Sha256::new();
    h.update(ts.to_string().as_bytes());
    h.update(b"\n");
    h.update(title.as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Deserialize)]
struct Line {
    ts: i64,
    title: String,
    #[serde(default)]
    body: String,
}

pub fn load_news(path: impl AsRef<Path>) -> Result<Vec<NewsItem>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_news(file)
}

/// Parses news JSONL (`ts`, `title`, `body`; other keys ignored), sorted by
/// timestamp with file order kept among equal timestamps.
pub fn parse_news(reader: impl Read) -> Result<Vec<NewsItem>> {
    let mut items = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|e| DataError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Line = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if raw.title.trim().is_empty() {
            return Err(DataError::Invariant {
                line: lineno,
                msg: "empty news title".into(),
            });
        }
        items.push(NewsItem::new(raw.ts, raw.title, raw.body));
    }
    items.sort_by_key(|n| n.ts);
    Ok(items)
}

/// Writes `id`, `ts`, `title`, `body` per line, in the given order.
pub fn write_news_jsonl(items: &[NewsItem], mut out: impl std::io::Write) -> std::io::Result<()> {
    for n in items {
        serde_json::to_writer(&mut out, n)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
