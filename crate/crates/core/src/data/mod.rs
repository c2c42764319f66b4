//! Market bars, news, score alignment, chronological splits, episode
//! sampling and feature construction.

mod align;
mod bars;
mod features;
mod news;
mod split;

use std::ops::Range;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use align::{forward_fill_scores, load_aligned, parse_aligned_csv, score_timeline, write_aligned_csv, TimedScore};
pub use bars::{load_bars, parse_bars, write_bars_csv, BarSeries};
pub use features::{build_features, FeatureMatrix, FeatureMode, N_FEATURES};
pub use news::{load_news, news_id, parse_news, write_news_jsonl};
pub use split::{chronological_split, sample_windows, DEFAULT_BOUNDARIES};

pub const MINUTE_MS: i64 = 60_000;
/// Scores used before the first news item: the midpoint of the 1..5 scale.
pub const NEUTRAL_SCORE: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: duplicate timestamp {ts}")]
    Duplicate { line: u64, ts: i64 },
    #[error("line {line}: {msg}")]
    Invariant { line: u64, msg: String },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("range of {have} frames is too short: need {need}")]
    TooShort { need: usize, have: usize },
    #[error("non-positive price at frame {0}")]
    NonPositivePrice(usize),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One minute of OHLCV data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub ts: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn check(&self) -> std::result::Result<(), String> {
        let vals = [self.open, self.high, self.low, self.close, self.volume];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err("non-finite field".into());
        }
        let (lo, hi) = (self.open.min(self.close), self.open.max(self.close));
        if !(self.low <= lo && hi <= self.high) {
            return Err(format!(
                "OHLC out of order: open {} high {} low {} close {}",
                self.open, self.high, self.low, self.close
            ));
        }
        if self.volume < 0.0 {
            return Err(format!("negative volume {}", self.volume));
        }
        if self.ts % MINUTE_MS != 0 {
            return Err(format!("timestamp {} is not minute-aligned", self.ts));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub ts: i64,
    pub title: String,
    pub body: String,
}

impl NewsItem {
    pub fn new(ts: i64, title: impl Into<String>, body: impl Into<String>) -> Self {
        let title = title.into();
        Self {
            id: news_id(ts, &title),
            ts,
            title,
            body: body.into(),
        }
    }
}

/// A bar with the sentiment/risk scores in force at its timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedFrame {
    pub bar: Bar,
    pub sentiment: u8,
    pub risk: u8,
}

impl AlignedFrame {
    pub fn ts(&self) -> i64 {
        self.bar.ts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Test => "test",
        }
    }
}

/// Contiguous, ordered, covering partition of the frame indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl DatasetSplit {
    pub fn range(&self, tag: SplitTag) -> Range<usize> {
        match tag {
            SplitTag::Train => self.train.clone(),
            SplitTag::Validation => self.validation.clone(),
            SplitTag::Test => self.test.clone(),
        }
    }

    pub fn tag_of(&self, index: usize) -> Option<SplitTag> {
        [SplitTag::Train, SplitTag::Validation, SplitTag::Test]
            .into_iter()
            .find(|t| self.range(*t).contains(&index))
    }
}

/// `length` consecutive frames starting at `start`, inside one split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeWindow {
    pub start: usize,
    pub length: usize,
    pub split: SplitTag,
}

impl EpisodeWindow {
    pub fn end(&self) -> usize {
        self.start + self.length
    }

    pub fn last(&self) -> usize {
        self.end() - 1
    }
}

/// Aligned frames together with the features derived from them.
#[derive(Clone, Debug)]
pub struct MarketData {
    pub frames: Vec<AlignedFrame>,
    pub features: FeatureMatrix,
}

impl MarketData {
    pub fn new(frames: Vec<AlignedFrame>, features: FeatureMatrix) -> Result<Self> {
        if frames.len() != features.rows() {
            return Err(DataError::Invalid(format!(
                "{} frames but {} feature rows",
                frames.len(),
                features.rows()
            )));
        }
        Ok(Self { frames, features })
    }

    /// Builds features with statistics from `train_range`.
    pub fn build(frames: Vec<AlignedFrame>, mode: FeatureMode, train_range: Range<usize>) -> Result<Self> {
        let features = build_features(&frames, mode, train_range)?;
        Self::new(frames, features)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn close(&self, i: usize) -> f64 {
        self.frames[i].bar.close
    }

    /// Same data with the sentiment and risk channels zeroed.
    pub fn without_llm(&self) -> Self {
        Self {
            frames: self.frames.clone(),
            features: self.features.without_llm(),
        }
    }
}
