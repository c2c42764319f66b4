//! Stage functions shared by the command-line tool and `selftest`:
//! alignment, study execution, top-k evaluation and report assembly.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentCheckpoint, Algo, CheckpointError};
use crate::data::{
    chronological_split, forward_fill_scores, score_timeline, AlignedFrame, Bar, DataError, DatasetSplit, FeatureMode,
    MarketData, NewsItem, SplitTag,
};
use crate::env::{EnvConfig, EnvError};
use crate::eval::{
    baseline_buy_hold, check_features, evaluate_periods, full_backtest, BacktestCurve, EvalError, NamedCurve, Report,
    ReportRow, TABLE_ROWS,
};
use crate::sentiment::{ScoredNews, SentimentError};
use crate::tuner::{
    rank_trials, run_trial, trial_seed, tune, Budget, Params, SearchSpace, TrialCtx, TrialOutcome, TrialRecord, TrialStore,
    TunerError,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Tuner(#[from] TunerError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

impl PipelineError {
    /// Problems with the inputs (as opposed to failures while running).
    pub fn is_input_error(&self) -> bool {
        match self {
            PipelineError::Data(_) | PipelineError::Invalid(_) | PipelineError::Env(EnvError::Config(_)) => true,
            PipelineError::Checkpoint(CheckpointError::Io { .. } | CheckpointError::Json { .. }) => true,
            PipelineError::Eval(EvalError::Data(_) | EvalError::FeatureMode { .. }) => true,
            PipelineError::Tuner(TunerError::Store { .. } | TunerError::Config(_)) => true,
            PipelineError::Sentiment(SentimentError::Cache { .. } | SentimentError::Fixture { .. }) => true,
            _ => false,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One (algorithm, backbone, ablation) configuration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Study {
    pub algo: Algo,
    pub net: String,
    pub no_llm: bool,
}

impl Study {
    pub fn new(algo: Algo, net: &str, no_llm: bool) -> Self {
        Self {
            algo,
            net: net.into(),
            no_llm,
        }
    }

    /// Directory and curve name, e.g. `grpo-lstm-no-llm`.
    pub fn name(&self) -> String {
        let suffix = if self.no_llm { "-no-llm" } else { "" };
        format!("{}-{}{suffix}", self.algo.name(), self.net)
    }

    /// Table row this study fills, if any.
    pub fn row_label(&self) -> Option<&'static str> {
        match (self.net.as_str(), self.no_llm) {
            ("mlp", false) => Some(TABLE_ROWS[0]),
            ("lstm", false) => Some(TABLE_ROWS[1]),
            ("transformer", false) => Some(TABLE_ROWS[2]),
            ("lstm", true) => Some(TABLE_ROWS[3]),
            ("transformer", true) => Some(TABLE_ROWS[4]),
            _ => None,
        }
    }

    /// Every cell of the results tables: both algorithms over the five rows.
    pub fn table_grid() -> Vec<Study> {
        let rows = [("mlp", false), ("lstm", false), ("transformer", false), ("lstm", true), ("transformer", true)];
        [Algo::Ddqn, Algo::Grpo]
            .into_iter()
            .flat_map(|a| rows.iter().map(move |&(n, x)| Study::new(a, n, x)))
            .collect()
    }
}

/// Forward-filled frames from bars, news and their scores.
pub fn align(bars: &[Bar], news: &[NewsItem], scores: &[ScoredNews]) -> Vec<AlignedFrame> {
    forward_fill_scores(bars, &score_timeline(news, scores))
}

/// Aligned data split chronologically, with features fitted on the
/// training range, plus the no-LLM ablation view.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: MarketData,
    pub data_no_llm: MarketData,
    pub split: DatasetSplit,
}

impl Prepared {
    pub fn new(frames: Vec<AlignedFrame>, mode: FeatureMode, boundaries: (f64, f64)) -> Result<Self> {
        let split = chronological_split(frames.len(), boundaries)?;
        let data = MarketData::build(frames, mode, split.train.clone())?;
        Ok(Self {
            data_no_llm: data.without_llm(),
            data,
            split,
        })
    }

    pub fn data(&self, no_llm: bool) -> &MarketData {
        if no_llm {
            &self.data_no_llm
        } else {
            &self.data
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudySettings {
    pub env: EnvConfig,
    pub budget: Budget,
    pub normalize_rewards: bool,
}

/// Trial context for `study`, writing checkpoints under `dir` when given.
pub fn trial_ctx<'a>(prep: &'a Prepared, study: &Study, settings: &StudySettings, dir: Option<&Path>) -> TrialCtx<'a> {
    TrialCtx {
        data: prep.data(study.no_llm),
        env: settings.env,
        train: prep.split.train.clone(),
        valid: prep.split.validation.clone(),
        algo: study.algo,
        net: study.net.clone(),
        budget: settings.budget,
        no_llm: study.no_llm,
        normalize_rewards: settings.normalize_rewards,
        out_dir: dir.map(Path::to_path_buf),
    }
}

/// Tunes `study`, keeping trials and checkpoints under `dir` when given
/// (`dir/trials.jsonl`, `dir/checkpoints/`).
pub fn run_study(
    prep: &Prepared,
    study: &Study,
    settings: &StudySettings,
    trials: usize,
    seed: u64,
    dir: Option<&Path>,
) -> Result<(TrialStore, Vec<TrialOutcome>)> {
    let mut store = match dir {
        Some(d) => TrialStore::open(d.join("trials.jsonl"))?,
        None => TrialStore::in_memory(),
    };
    let outcomes = tune(&trial_ctx(prep, study, settings, dir), &mut store, trials, seed)?;
    Ok((store, outcomes))
}

/// Trains one agent with fixed `params`, or with a uniform draw from the
/// search space seeded by `seed` when none are given.
pub fn train_single(
    prep: &Prepared,
    study: &Study,
    settings: &StudySettings,
    params: Option<Params>,
    seed: u64,
    dir: Option<&Path>,
) -> Result<TrialOutcome> {
    let space = SearchSpace::for_config(study.algo, &study.net)?;
    let params = match params {
        Some(p) => {
            for d in &space.dims {
                let v = p.get(&d.name).ok_or_else(|| PipelineError::Invalid(format!("missing parameter {}", d.name)))?;
                if !d.kind.contains(*v) {
                    return Err(PipelineError::Invalid(format!("parameter {} = {v} is outside its range", d.name)));
                }
            }
            if let Some(k) = p.keys().find(|k| !space.dims.iter().any(|d| &d.name == *k)) {
                return Err(PipelineError::Invalid(format!("unknown parameter {k}")));
            }
            p
        }
        None => space.sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed)),
    };
    Ok(run_trial(&trial_ctx(prep, study, settings, dir), 0, params, trial_seed(seed, 0))?)
}

/// Test-split protocol: `periods` windows of `length` minutes drawn with
/// `seed`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub env: EnvConfig,
    pub periods: usize,
    pub length: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentResult {
    pub trial_id: usize,
    pub mean_usdt: f64,
    pub curve: BacktestCurve,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyResult {
    pub study: Study,
    /// Ranked agents that were evaluated (one, or ten when available).
    pub agents: Vec<AgentResult>,
}

impl StudyResult {
    fn top(&self, k: usize, f: impl Fn(&AgentResult) -> f64) -> Option<f64> {
        (self.agents.len() >= k).then(|| self.agents[..k].iter().map(f).sum::<f64>() / k as f64)
    }

    pub fn top_usdt(&self, k: usize) -> Option<f64> {
        self.top(k, |a| a.mean_usdt)
    }

    /// Full-backtest return in percent.
    pub fn top_pct(&self, k: usize) -> Option<f64> {
        self.top(k, |a| a.curve.pct_return * 100.0)
    }

    /// Pointwise mean of the evaluated agents' top-k backtest curves.
    pub fn curve(&self, k: usize) -> Vec<(i64, f64)> {
        let k = k.min(self.agents.len());
        let curves: Vec<BacktestCurve> = self.agents[..k].iter().map(|a| a.curve.clone()).collect();
        crate::eval::average_curves(&curves)
    }
}

/// Evaluates the best trial, or the best ten when at least ten finished.
pub fn evaluate_study(
    prep: &Prepared,
    study: &Study,
    records: &[TrialRecord],
    load: impl Fn(&TrialRecord) -> Result<AgentCheckpoint>,
    settings: &EvalSettings,
) -> Result<StudyResult> {
    let k = if rank_trials(records, 10).is_ok() { 10 } else { 1 };
    let data = prep.data(study.no_llm);
    let test = prep.split.test.clone();
    let mut agents = Vec::with_capacity(k);
    for rec in rank_trials(records, k)? {
        let ck = load(&rec)?;
        check_features(&ck, data)?;
        if ck.no_llm != study.no_llm {
            return Err(PipelineError::Invalid(format!("trial {} has no_llm={}", rec.trial_id, ck.no_llm)));
        }
        let periods = evaluate_periods(
            &ck.network,
            data,
            &settings.env,
            test.clone(),
            SplitTag::Test,
            settings.periods,
            settings.length,
            settings.seed,
        )?;
        let curve = full_backtest(&ck.network, data, &settings.env, test.clone())?;
        agents.push(AgentResult {
            trial_id: rec.trial_id,
            mean_usdt: periods.mean_usdt,
            curve,
        });
    }
    Ok(StudyResult {
        study: study.clone(),
        agents,
    })
}

/// Loads checkpoints referenced relative to `dir`.
pub fn checkpoint_loader(dir: &Path) -> impl Fn(&TrialRecord) -> Result<AgentCheckpoint> + '_ {
    move |r| {
        let rel = r
            .checkpoint_ref
            .as_deref()
            .ok_or_else(|| PipelineError::Invalid(format!("trial {} has no checkpoint", r.trial_id)))?;
        Ok(AgentCheckpoint::load(dir.join(rel))?)
    }
}

fn cells(results: &[StudyResult], label: &str, f: impl Fn(&StudyResult, usize) -> Option<f64>) -> [Option<f64>; 4] {
    let find = |algo| results.iter().find(|r| r.study.algo == algo && r.study.row_label() == Some(label));
    let d = find(Algo::Ddqn);
    let g = find(Algo::Grpo);
    [
        d.and_then(|r| f(r, 1)),
        d.and_then(|r| f(r, 10)),
        g.and_then(|r| f(r, 1)),
        g.and_then(|r| f(r, 10)),
    ]
}

/// Tables, top-1 curves and the buy-and-hold baseline over the test split.
pub fn build_report(prep: &Prepared, results: &[StudyResult], notes: Vec<String>) -> Report {
    let rows = |f: &dyn Fn(&StudyResult, usize) -> Option<f64>| -> Vec<ReportRow> {
        TABLE_ROWS
            .iter()
            .map(|&label| ReportRow {
                network: label.into(),
                cells: cells(results, label, f),
            })
            .collect()
    };
    let test = prep.split.test.clone();
    let data = &prep.data;
    Report {
        table1: rows(&|r, k| r.top_usdt(k)),
        table2: rows(&|r, k| r.top_pct(k)),
        curves: results
            .iter()
            .map(|r| NamedCurve {
                name: r.study.name(),
                points: r.curve(1),
            })
            .collect(),
        baseline: test.clone().map(|i| (data.frames[i].ts(), data.close(i))).collect(),
        initial_equity: data.close(test.start),
        baseline_pct: baseline_buy_hold(data, test),
        notes,
    }
}

/// `dir/<name>` for a study.
pub fn study_dir(root: &Path, study: &Study) -> PathBuf {
    root.join(study.name())
}
