use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{Result, ScoredNews, SentimentError};

/// Append-only JSONL store of [`ScoredNews`]. A `(news_id, model_id,
/// prompt_hash)` key is written at most once.
#[derive(Debug, Default)]
pub struct ScoreCache {
    path: Option<PathBuf>,
    records: Vec<ScoredNews>,
    keys: HashSet<(String, String, String)>,
    lookup: HashMap<(String, String, String), usize>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the cache file at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let err = |msg: String| SentimentError::Cache {
            path: path.display().to_string(),
            msg,
        };
        let mut cache = Self {
            path: Some(path.clone()),
            ..Self::default()
        };
        if path.exists() {
            let file = std::fs::File::open(&path).map_err(|e| err(e.to_string()))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| err(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ScoredNews = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
                if !rec.in_range() {
                    return Err(err(format!("line {}: score out of 1..5", i + 1)));
                }
                cache.remember(rec);
            }
        }
        Ok(cache)
    }

    fn remember(&mut self, rec: ScoredNews) -> bool {
        let key = (rec.news_id.clone(), rec.model_id.clone(), rec.prompt_hash.clone());
        if !self.keys.insert(key) {
            return false;
        }
        let hit = (rec.news_id.clone(), rec.model_id.clone(), rec.template_hash.clone());
        self.lookup.entry(hit).or_insert(self.records.len());
        self.records.push(rec);
        true
    }

    /// Score for an item under a model and prompt template, if cached.
    pub fn get(&self, news_id: &str, model_id: &str, template_hash: &str) -> Option<&ScoredNews> {
        self.lookup
            .get(&(news_id.to_string(), model_id.to_string(), template_hash.to_string()))
            .map(|&i| &self.records[i])
    }

    /// Adds records and appends the new ones to the file; existing keys are
    /// skipped. Returns how many were written.
    pub fn insert_all(&mut self, recs: impl IntoIterator<Item = ScoredNews>) -> Result<usize> {
        let fresh: Vec<ScoredNews> = recs.into_iter().filter(|r| self.remember(r.clone())).collect();
        if let (Some(path), false) = (&self.path, fresh.is_empty()) {
            let err = |e: std::io::Error| SentimentError::Cache {
                path: path.display().to_string(),
                msg: e.to_string(),
            };
            let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
            for r in &fresh {
                let line = serde_json::to_string(r).expect("ScoredNews serializes");
                writeln!(file, "{line}").map_err(err)?;
            }
            file.flush().map_err(err)?;
        }
        Ok(fresh.len())
    }

    pub fn records(&self) -> &[ScoredNews] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
