//! LLM scoring of news sentiment and risk: prompt rendering, batching,
//! response parsing, an append-only score cache, and HTTP / fixture
//! chat backends.

mod backend;
mod cache;
mod client;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};

pub use backend::{ChatBackend, FixtureBackend, FixtureEntry, HttpBackend, TransportError, API_KEY_ENV};
pub use cache::ScoreCache;
pub use client::{score_news, ScoreConfig};
pub use parse::{parse_scores, parse_scores_lenient, ParseError, ParseErrorKind};
pub use prompt::{
    build_prompt, pack_batches, prompt_hash, template_hash, ScoreBatch, DEFAULT_ASSET, DEFAULT_CHAR_BUDGET,
    PROMPT_TEMPLATE, PROMPT_VERSION,
};

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum SentimentError {
    #[error("news item {id} does not fit in {budget} characters even without its body")]
    Budget { id: String, budget: usize },
    #[error("cannot build a prompt from zero items")]
    EmptyBatch,
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("scoring failed for {} item(s) ({last}): {}", unscored.len(), unscored.join(","))]
    Transport { unscored: Vec<String>, last: String },
    #[error("{path}: {msg}")]
    Cache { path: String, msg: String },
    #[error("fixture file line {line}: {msg}")]
    Fixture { line: usize, msg: String },
}

pub type Result<T, E = SentimentError> = std::result::Result<T, E>;

/// One news item's scores, as persisted in the cache file.
///
/// `prompt_hash` identifies the exact rendered batch prompt that produced
/// the scores; `template_hash` identifies the prompt template and decides
/// cache hits independently of how items were batched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredNews {
    pub news_id: String,
    pub sentiment: u8,
    pub risk: u8,
    pub model_id: String,
    pub prompt_hash: String,
    pub template_hash: String,
}

impl ScoredNews {
    pub fn in_range(&self) -> bool {
        (MIN_SCORE..=MAX_SCORE).contains(&self.sentiment) && (MIN_SCORE..=MAX_SCORE).contains(&self.risk)
    }
}
