//! Bundled fixtures and the end-to-end `selftest` run: ingest, score
//! offline, align, tune, evaluate, backtest and report, with property
//! checks along the way.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::Algo;
use crate::data::{
    parse_bars, parse_news, write_aligned_csv, write_bars_csv, write_news_jsonl, AlignedFrame, EpisodeWindow,
    FeatureMode, NewsItem, SplitTag, DEFAULT_BOUNDARIES, NEUTRAL_SCORE,
};
use crate::env::{replay_equity, Action, EnvConfig, TradingEnv};
use crate::eval::{emit_report, TABLE_HEADER};
use crate::pipeline::{
    align, build_report, checkpoint_loader, evaluate_study, io_err, run_study, study_dir, EvalSettings, Prepared,
    Result, Study, StudyResult, StudySettings,
};
use crate::sentiment::{
    build_prompt, pack_batches, score_news, FixtureBackend, FixtureEntry, ScoreCache, ScoreConfig, DEFAULT_ASSET,
    DEFAULT_CHAR_BUDGET,
};
use crate::synth::{keyword_scores, news_driven_market, KeywordResponder};
use crate::tuner::Budget;

/// Model id under which the fixture responses were recorded.
pub const FIXTURE_MODEL: &str = "keyword-responder";
pub const FIXTURE_BARS: &str = include_str!("../fixtures/bars.csv");
pub const FIXTURE_NEWS: &str = include_str!("../fixtures/news.jsonl");
pub const FIXTURE_RESPONSES: &str = include_str!("../fixtures/responses.jsonl");

pub const FIXTURE_MINUTES: usize = 10_000;
const FIXTURE_NEWS_COUNT: usize = 400;
const FIXTURE_START_PRICE: f64 = 7200.0;
const FIXTURE_SEED: u64 = 2020;

/// File contents of the three fixtures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixtureSet {
    pub bars_csv: String,
    pub news_jsonl: String,
    pub responses_jsonl: String,
}

/// Regenerates the bundled fixtures: a news-driven market, its headlines
/// and keyword-derived responses for every default-budget prompt.
pub fn generate_fixtures() -> FixtureSet {
    let (bars, news) = news_driven_market(FIXTURE_MINUTES, FIXTURE_NEWS_COUNT, FIXTURE_START_PRICE, FIXTURE_SEED);
    let mut bars_csv = Vec::new();
    write_bars_csv(&bars, &mut bars_csv).expect("in-memory write");
    let mut news_jsonl = Vec::new();
    write_news_jsonl(&news, &mut news_jsonl).expect("in-memory write");
    let mut responses = String::new();
    for batch in pack_batches(&news, DEFAULT_ASSET, DEFAULT_CHAR_BUDGET) {
        let b = build_prompt(&batch, DEFAULT_ASSET, DEFAULT_CHAR_BUDGET).expect("fixture items fit the budget");
        let entry = FixtureEntry {
            prompt_hash: b.prompt_hash.clone(),
            response: KeywordResponder::answer(&b.rendered_prompt),
        };
        responses.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
        responses.push('\n');
    }
    FixtureSet {
        bars_csv: String::from_utf8(bars_csv).expect("utf-8"),
        news_jsonl: String::from_utf8(news_jsonl).expect("utf-8"),
        responses_jsonl: responses,
    }
}

#[derive(Clone, Debug)]
pub struct SelftestConfig {
    pub seed: u64,
    pub trials: usize,
    pub studies: Vec<Study>,
    pub budget: Budget,
    /// Test-split protocol; defaults to the budget's validation protocol.
    pub eval_periods: usize,
    pub eval_length: usize,
    pub env: EnvConfig,
    pub out_dir: PathBuf,
}

impl SelftestConfig {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64, budget: Budget) -> Self {
        Self {
            seed,
            trials: 5,
            studies: Study::table_grid(),
            budget,
            eval_periods: budget.n_eval,
            eval_length: budget.eval_len,
            env: EnvConfig::default(),
            out_dir: out_dir.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SelftestSummary {
    pub checks: Vec<Check>,
    pub results: Vec<StudyResult>,
    pub report_dir: PathBuf,
}

impl SelftestSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(checks: &mut Vec<Check>, name: &'static str, passed: bool, detail: String) {
    if passed {
        log::info!("selftest: {name} ok ({detail})");
    } else {
        log::warn!("selftest: {name} FAILED ({detail})");
    }
    checks.push(Check { name, passed, detail });
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn remove_dir(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_dir_all(path).map_err(io_err(path))?;
    }
    Ok(())
}

/// Brute-force reference for the forward fill: the latest news at or
/// before each frame (later file entries win ties), neutral before any.
pub fn lookahead_violations(frames: &[AlignedFrame], news: &[NewsItem], scores: &[(u8, u8)]) -> usize {
    frames
        .iter()
        .filter(|f| {
            let mut want = (NEUTRAL_SCORE, NEUTRAL_SCORE);
            let mut best_ts = i64::MIN;
            for (n, &s) in news.iter().zip(scores) {
                if n.ts <= f.ts() && n.ts >= best_ts {
                    best_ts = n.ts;
                    want = s;
                }
            }
            (f.sentiment, f.risk) != want
        })
        .count()
}

/// Largest |sum of rewards - equity change| and the number of replay
/// mismatches over `n` random windows and action sequences.
pub fn accounting_probe(prep: &Prepared, env: &EnvConfig, n: usize, seed: u64) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = &prep.data;
    let cfg = EnvConfig { lookback: 1, ..*env };
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..n {
        let length = rng.random_range(2..300);
        let start = rng.random_range(1..data.len() - length);
        let window = EpisodeWindow {
            start,
            length,
            split: SplitTag::Train,
        };
        let actions: Vec<Action> = (1..length).map(|_| Action::ALL[rng.random_range(0..3)]).collect();
        let mut e = TradingEnv::new(data, cfg)?;
        e.reset(window)?;
        let mut sum = 0.0;
        for &a in &actions {
            sum += e.step(a)?.reward;
        }
        worst = worst.max((sum - (e.equity() - cfg.initial_equity)).abs());
        let rep = replay_equity(data, window, &actions, &cfg)?;
        if rep.final_equity != e.equity() {
            mismatches += 1;
        }
    }
    Ok((worst, mismatches))
}

/// Runs the whole pipeline on the bundled fixtures under `cfg.out_dir`:
/// `data/` (ingested inputs, score cache, aligned frames), `studies/`
/// (trial stores and checkpoints) and `report/`.
pub fn run_selftest(cfg: &SelftestConfig) -> Result<SelftestSummary> {
    let out = &cfg.out_dir;
    let data_dir = out.join("data");
    let studies_dir = out.join("studies");
    let report_dir = out.join("report");
    for d in [&data_dir, &studies_dir, &report_dir] {
        remove_dir(d)?;
    }
    let mut checks = Vec::new();

    // ingest
    let series = parse_bars(FIXTURE_BARS.as_bytes())?;
    let news = parse_news(FIXTURE_NEWS.as_bytes())?;
    check(
        &mut checks,
        "ingest",
        series.bars.len() == FIXTURE_MINUTES && series.missing_minutes == 0 && !news.is_empty(),
        format!("{} bars, {} missing minutes, {} news", series.bars.len(), series.missing_minutes, news.len()),
    );
    let p = data_dir.join("bars.csv");
    write_bars_csv(&series.bars, create(&p)?).map_err(io_err(&p))?;
    let p = data_dir.join("news.jsonl");
    write_news_jsonl(&news, create(&p)?).map_err(io_err(&p))?;

    // score offline, twice
    let backend = FixtureBackend::parse(FIXTURE_MODEL, FIXTURE_RESPONSES.as_bytes())?;
    let mut cache = ScoreCache::open(data_dir.join("scores.jsonl"))?;
    let score_cfg = ScoreConfig::default();
    let scored = score_news(&news, &backend, &mut cache, &score_cfg)?;
    let first_calls = backend.calls();
    let again = score_news(&news, &backend, &mut cache, &score_cfg)?;
    let oracle_ok = news
        .iter()
        .zip(&scored)
        .all(|(n, s)| s.news_id == n.id && (s.sentiment, s.risk) == keyword_scores(&n.title));
    check(
        &mut checks,
        "scoring",
        oracle_ok && scored.iter().all(|s| s.in_range()) && again == scored && backend.calls() == first_calls,
        format!("{} items in {first_calls} requests, rerun made {}", scored.len(), backend.calls() - first_calls),
    );

    // align
    let frames = align(&series.bars, &news, &scored);
    let p = data_dir.join("aligned.csv");
    write_aligned_csv(&frames, create(&p)?).map_err(io_err(&p))?;
    let pairs: Vec<(u8, u8)> = scored.iter().map(|s| (s.sentiment, s.risk)).collect();
    let bad = lookahead_violations(&frames, &news, &pairs);
    check(&mut checks, "no look-ahead", bad == 0, format!("{bad} of {} frames disagree with the brute-force fill", frames.len()));

    let prep = Prepared::new(frames, FeatureMode::Returns, DEFAULT_BOUNDARIES)?;
    let s = &prep.split;
    check(
        &mut checks,
        "split",
        s.train.end == 7000 && s.validation.end == 8500 && s.test.end == FIXTURE_MINUTES,
        format!("{:?} / {:?} / {:?}", s.train, s.validation, s.test),
    );
    let (worst, mismatches) = accounting_probe(&prep, &cfg.env, 200, cfg.seed)?;
    check(
        &mut checks,
        "accounting",
        worst <= 1e-9 && mismatches == 0,
        format!("max identity error {worst:.2e}, {mismatches} replay mismatches"),
    );

    // tune and evaluate
    let settings = StudySettings {
        env: cfg.env,
        budget: cfg.budget,
        normalize_rewards: true,
    };
    let eval = EvalSettings {
        env: cfg.env,
        periods: cfg.eval_periods,
        length: cfg.eval_length,
        seed: crate::eval::DEFAULT_EVAL_SEED,
    };
    let mut results = Vec::new();
    for study in &cfg.studies {
        let dir = study_dir(&studies_dir, study);
        log::info!("selftest: tuning {} ({} trials)", study.name(), cfg.trials);
        let (store, _) = run_study(&prep, study, &settings, cfg.trials, cfg.seed, Some(&dir))?;
        let res = evaluate_study(&prep, study, store.records(), checkpoint_loader(&dir), &eval)?;
        results.push(res);
    }
    let finished = results.len();
    check(
        &mut checks,
        "tuning",
        finished == cfg.studies.len(),
        format!("{finished} studies with at least one finished trial"),
    );

    let report = build_report(
        &prep,
        &results,
        vec![format!(
            "selftest seed {}, {} trials per configuration, {} test periods of {} minutes",
            cfg.seed, cfg.trials, cfg.eval_periods, cfg.eval_length
        )],
    );
    emit_report(&report, &report_dir)?;
    let table1 = std::fs::read_to_string(report_dir.join("table1.csv")).unwrap_or_default();
    let svg = std::fs::read_to_string(report_dir.join("backtest.svg")).unwrap_or_default();
    let polylines = svg.matches("<polyline").count();
    check(
        &mut checks,
        "report",
        table1.starts_with(TABLE_HEADER) && table1.lines().count() == 6 && polylines == results.len() + 1,
        format!("{} table rows, {polylines} polylines", table1.lines().count().saturating_sub(1)),
    );
    Ok(SelftestSummary {
        checks,
        results,
        report_dir,
    })
}

/// Studies covering both algorithms with the cheapest backbone.
pub fn mlp_studies() -> Vec<Study> {
    vec![Study::new(Algo::Ddqn, "mlp", false), Study::new(Algo::Grpo, "mlp", false)]
}
