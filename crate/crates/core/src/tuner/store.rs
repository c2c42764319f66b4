use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::space::Params;
use super::{Result, TunerError};
use crate::agents::Algo;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    EarlyStopped,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub algo: Algo,
    pub net: String,
    pub no_llm: bool,
    pub seed: u64,
    pub params: Params,
    /// Mean validation return (USDT) at each evaluation.
    pub eval_history: Vec<f64>,
    pub best_score: Option<f64>,
    pub status: TrialStatus,
    /// Relative to the store's directory.
    pub checkpoint_ref: Option<String>,
    pub env_steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl TrialRecord {
    pub fn new(trial_id: usize, algo: Algo, net: &str, no_llm: bool, seed: u64, params: Params) -> Self {
        Self {
            trial_id,
            algo,
            net: net.into(),
            no_llm,
            seed,
            params,
            eval_history: Vec::new(),
            best_score: None,
            status: TrialStatus::Running,
            checkpoint_ref: None,
            env_steps: 0,
            message: None,
        }
    }

    /// Appends a score; returns true when it is a new strict best.
    pub fn push_eval(&mut self, score: f64) -> bool {
        self.eval_history.push(score);
        let better = self.best_score.is_none_or(|b| score > b);
        if better {
            self.best_score = Some(score);
        }
        better
    }

    pub fn is_rankable(&self) -> bool {
        matches!(self.status, TrialStatus::Completed | TrialStatus::EarlyStopped) && self.best_score.is_some()
    }
}

/// Append-only JSONL file of finished trials (or memory only).
#[derive(Debug, Default)]
pub struct TrialStore {
    path: Option<PathBuf>,
    records: Vec<TrialRecord>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TunerError + '_ {
    move |source| TunerError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl TrialStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing records; the file is created on first append.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let f = File::open(&path).map_err(io_err(&path))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io_err(&path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec = serde_json::from_str(&line).map_err(|e| TunerError::Store {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
                records.push(rec);
            }
        }
        Ok(Self {
            path: Some(path),
            records,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Directory that `checkpoint_ref`s are relative to.
    pub fn dir(&self) -> Option<&Path> {
        self.path.as_deref().map(|p| p.parent().unwrap_or(Path::new(".")))
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn next_id(&self) -> usize {
        self.records.iter().map(|r| r.trial_id + 1).max().unwrap_or(0)
    }

    pub fn append(&mut self, rec: TrialRecord) -> Result<()> {
        if self.records.iter().any(|r| r.trial_id == rec.trial_id) {
            return Err(TunerError::DuplicateTrial(rec.trial_id));
        }
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            f.write_all(line.as_bytes()).map_err(io_err(path))?;
            f.flush().map_err(io_err(path))?;
        }
        self.records.push(rec);
        Ok(())
    }
}

/// The `k` best finished trials by `best_score`, ties to the lower id.
pub fn rank_trials(records: &[TrialRecord], k: usize) -> Result<Vec<TrialRecord>> {
    let mut v: Vec<&TrialRecord> = records.iter().filter(|r| r.is_rankable()).collect();
    if v.len() < k {
        return Err(TunerError::NotEnoughTrials { need: k, have: v.len() });
    }
    v.sort_by(|a, b| {
        b.best_score
            .unwrap()
            .total_cmp(&a.best_score.unwrap())
            .then(a.trial_id.cmp(&b.trial_id))
    });
    Ok(v.into_iter().take(k).cloned().collect())
}
