use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Duration;

use newsrl::agents::{AgentCheckpoint, Algo, CheckpointError};
use newsrl::data::{load_aligned, load_bars, load_news, write_aligned_csv, write_bars_csv, write_news_jsonl, DataError, SplitTag};
use newsrl::eval::{baseline_buy_hold, check_features, emit_report, evaluate_periods, full_backtest, EvalError};
use newsrl::pipeline::{
    align, build_report, checkpoint_loader, evaluate_study, run_study, study_dir, train_single, PipelineError, Prepared,
    Study, StudySettings,
};
use newsrl::selftest::{mlp_studies, run_selftest, SelftestConfig, FIXTURE_MODEL, FIXTURE_RESPONSES};
use newsrl::sentiment::{score_news, template_hash, ChatBackend, FixtureBackend, HttpBackend, ScoreCache, SentimentError};
use newsrl::tuner::{Budget, Params, TrialStatus, TunerError};
use serde_json::json;

use crate::config::RunConfig;
use crate::runlog::RunLog;
use crate::{AlgoArg, CliError, Command, NetArg, ProtocolArgs, StudyArgs};

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Pipeline(PipelineError::from(e))
            }
        }
    )*};
}
via_pipeline!(DataError, SentimentError, TunerError, EvalError, CheckpointError);

type Result<T> = std::result::Result<T, CliError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(io(d))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io(path))?))
}

/// Writes the resolved configuration next to a command's outputs.
fn save_config(cfg: &RunConfig, dir: &Path, command: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let p = dir.join(format!("{command}.config.toml"));
    std::fs::write(&p, cfg.to_toml()).map_err(io(&p))
}

struct Layout {
    data: PathBuf,
    studies: PathBuf,
    root: PathBuf,
}

impl Layout {
    fn new(cfg: &RunConfig) -> Self {
        let root = cfg.paths.work_dir.clone();
        Self {
            data: root.join("data"),
            studies: root.join("studies"),
            root,
        }
    }

    fn bars(&self) -> PathBuf {
        self.data.join("bars.csv")
    }

    fn news(&self) -> PathBuf {
        self.data.join("news.jsonl")
    }

    fn scores(&self) -> PathBuf {
        self.data.join("scores.jsonl")
    }

    fn aligned(&self) -> PathBuf {
        self.data.join("aligned.csv")
    }
}

fn prepared(cfg: &RunConfig, layout: &Layout) -> Result<Prepared> {
    let frames = load_aligned(layout.aligned())?;
    Ok(Prepared::new(frames, cfg.features.mode, cfg.boundaries())?)
}

fn apply_study(cfg: &mut RunConfig, a: &StudyArgs) {
    if let Some(x) = a.algo {
        cfg.tuner.algo = match x {
            AlgoArg::Ddqn => "ddqn",
            AlgoArg::Grpo => "grpo",
        }
        .into();
    }
    if let Some(n) = a.net {
        cfg.tuner.net = match n {
            NetArg::Mlp => "mlp",
            NetArg::Lstm => "lstm",
            NetArg::Transformer => "transformer",
        }
        .into();
    }
    if let Some(s) = a.seed {
        cfg.tuner.seed = s;
    }
    cfg.tuner.desk_scale |= a.desk_scale;
    cfg.tuner.no_llm |= a.no_llm;
}

fn apply_protocol(cfg: &mut RunConfig, p: &ProtocolArgs) {
    cfg.tuner.desk_scale |= p.desk_scale;
    cfg.eval.periods = p.periods.or(cfg.eval.periods);
    cfg.eval.length = p.length.or(cfg.eval.length);
    cfg.eval.seed = p.eval_seed.unwrap_or(cfg.eval.seed);
}

fn study_of(cfg: &RunConfig) -> Study {
    let algo = if cfg.tuner.algo == "grpo" { Algo::Grpo } else { Algo::Ddqn };
    Study::new(algo, &cfg.tuner.net, cfg.tuner.no_llm)
}

fn study_settings(cfg: &RunConfig) -> StudySettings {
    StudySettings {
        env: cfg.env_config(),
        budget: cfg.budget(),
        normalize_rewards: cfg.tuner.normalize_rewards,
    }
}

fn name(c: &Command) -> &'static str {
    match c {
        Command::IngestBars { .. } => "ingest-bars",
        Command::IngestNews { .. } => "ingest-news",
        Command::ScoreNews { .. } => "score-news",
        Command::Align { .. } => "align",
        Command::Tune { .. } => "tune",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Backtest { .. } => "backtest",
        Command::Report { .. } => "report",
        Command::Selftest { .. } => "selftest",
    }
}

pub fn dispatch(command: Command, mut cfg: RunConfig) -> Result<()> {
    let cmd = name(&command);
    match &command {
        Command::Tune { study, trials, .. } => {
            apply_study(&mut cfg, study);
            cfg.tuner.trials = trials.unwrap_or(cfg.tuner.trials);
        }
        Command::Train { study, .. } => apply_study(&mut cfg, study),
        Command::Evaluate { eval } => apply_protocol(&mut cfg, &eval.protocol),
        Command::Report { eval } => apply_protocol(&mut cfg, &eval.protocol),
        Command::Selftest { seed, .. } => cfg.tuner.seed = seed.unwrap_or(cfg.tuner.seed),
        _ => {}
    }
    cfg.validate()?;
    let layout = Layout::new(&cfg);
    let log = RunLog::new(&layout.root, cmd);
    log.event("start", json!({"seed": cfg.tuner.seed, "work_dir": layout.root.display().to_string()}));
    let res = match command {
        Command::IngestBars { input } => ingest_bars(&cfg, &layout, input, &log),
        Command::IngestNews { input } => ingest_news(&cfg, &layout, input, &log),
        Command::ScoreNews { offline, fixture } => score(&cfg, &layout, offline, fixture, &log),
        Command::Align { model } => align_cmd(&cfg, &layout, model, &log),
        Command::Tune { resume, .. } => tune(&cfg, &layout, resume, &log),
        Command::Train { params, .. } => train(&cfg, &layout, params, &log),
        Command::Evaluate { eval } => evaluate(&cfg, &layout, &eval.checkpoint, &log),
        Command::Backtest { checkpoint } => backtest(&cfg, &layout, &checkpoint, &log),
        Command::Report { .. } => report(&cfg, &layout, &log),
        Command::Selftest {
            trials,
            desk_scale,
            mlp_only,
            ..
        } => selftest(&cfg, &layout, trials, desk_scale, mlp_only, &log),
    };
    match &res {
        Ok(()) => log.event("finish", json!({"status": "ok"})),
        Err(e) => log.event("finish", json!({"status": "error", "exit_code": e.exit_code(), "error": e.to_string()})),
    }
    res
}

fn input_path(flag: Option<PathBuf>, cfg: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| cfg.cloned())
        .ok_or_else(|| CliError::Usage(format!("no {what} input: pass --input or set paths.{what}")))
}

fn ingest_bars(cfg: &RunConfig, l: &Layout, input: Option<PathBuf>, log: &RunLog) -> Result<()> {
    let input = input_path(input, cfg.paths.bars.as_ref(), "bars")?;
    let series = load_bars(&input)?;
    let out = l.bars();
    write_bars_csv(&series.bars, create(&out)?).map_err(io(&out))?;
    save_config(cfg, &l.data, "ingest-bars")?;
    if series.missing_minutes > 0 {
        log::warn!("{} minutes missing between first and last bar", series.missing_minutes);
    }
    log.event(
        "artifact",
        json!({"path": out.display().to_string(), "bars": series.bars.len(), "missing_minutes": series.missing_minutes}),
    );
    println!("{} bars ({} missing minutes) -> {}", series.bars.len(), series.missing_minutes, out.display());
    Ok(())
}

fn ingest_news(cfg: &RunConfig, l: &Layout, input: Option<PathBuf>, log: &RunLog) -> Result<()> {
    let input = input_path(input, cfg.paths.news.as_ref(), "news")?;
    let news = load_news(&input)?;
    let out = l.news();
    write_news_jsonl(&news, create(&out)?).map_err(io(&out))?;
    save_config(cfg, &l.data, "ingest-news")?;
    log.event("artifact", json!({"path": out.display().to_string(), "items": news.len()}));
    println!("{} news items -> {}", news.len(), out.display());
    Ok(())
}

fn score(cfg: &RunConfig, l: &Layout, offline: bool, fixture: Option<PathBuf>, log: &RunLog) -> Result<()> {
    let news = load_news(l.news())?;
    let backend: Box<dyn ChatBackend> = if offline {
        match fixture.or_else(|| cfg.paths.fixture.clone()) {
            Some(p) => {
                let f = File::open(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
                Box::new(FixtureBackend::parse(&cfg.endpoint.model, f)?)
            }
            None => Box::new(FixtureBackend::parse(FIXTURE_MODEL, FIXTURE_RESPONSES.as_bytes())?),
        }
    } else {
        let e = &cfg.endpoint;
        Box::new(
            HttpBackend::from_env(&e.base_url, &e.model, Duration::from_secs(e.timeout_secs))
                .map_err(|t| CliError::Data(format!("{t} (use --offline for recorded responses)")))?,
        )
    };
    let mut cache = ScoreCache::open(l.scores())?;
    let before = cache.len();
    let scored = score_news(&news, backend.as_ref(), &mut cache, &cfg.score_config())?;
    save_config(cfg, &l.data, "score-news")?;
    let added = cache.len() - before;
    log.event(
        "artifact",
        json!({"path": l.scores().display().to_string(), "scored": scored.len(), "new": added, "model": backend.model_id()}),
    );
    println!("{} items scored ({added} new) with {} -> {}", scored.len(), backend.model_id(), l.scores().display());
    Ok(())
}

fn align_cmd(cfg: &RunConfig, l: &Layout, model: Option<String>, log: &RunLog) -> Result<()> {
    let bars = load_bars(l.bars())?.bars;
    let news = load_news(l.news())?;
    let cache = ScoreCache::open(l.scores())?;
    let model = match model {
        Some(m) => m,
        None => {
            let mut models: Vec<&str> = cache.records().iter().map(|r| r.model_id.as_str()).collect();
            models.sort_unstable();
            models.dedup();
            match models.as_slice() {
                [m] => m.to_string(),
                [] => return Err(CliError::Data(format!("{} holds no scores; run score-news first", l.scores().display()))),
                _ => return Err(CliError::Usage(format!("cache holds scores from {models:?}; pick one with --model"))),
            }
        }
    };
    let tmpl = template_hash();
    let scored: Vec<_> = news.iter().filter_map(|n| cache.get(&n.id, &model, &tmpl).cloned()).collect();
    if scored.len() < news.len() {
        log::warn!("{} of {} news items have no {model} score and are ignored", news.len() - scored.len(), news.len());
    }
    let frames = align(&bars, &news, &scored);
    let out = l.aligned();
    write_aligned_csv(&frames, create(&out)?).map_err(io(&out))?;
    save_config(cfg, &l.data, "align")?;
    log.event("artifact", json!({"path": out.display().to_string(), "frames": frames.len(), "model": model}));
    println!("{} frames aligned with {} scored news -> {}", frames.len(), scored.len(), out.display());
    Ok(())
}

fn tune(cfg: &RunConfig, l: &Layout, resume: bool, log: &RunLog) -> Result<()> {
    let prep = prepared(cfg, l)?;
    let study = study_of(cfg);
    let dir = study_dir(&l.studies, &study);
    if !resume && dir.exists() {
        log::info!("replacing previous trials in {}", dir.display());
        std::fs::remove_dir_all(&dir).map_err(io(&dir))?;
    }
    let (store, outcomes) = run_study(&prep, &study, &study_settings(cfg), cfg.tuner.trials, cfg.tuner.seed, Some(&dir))?;
    save_config(cfg, &dir, "tune")?;
    for o in &outcomes {
        let r = &o.record;
        log.event(
            "trial",
            json!({"study": study.name(), "trial_id": r.trial_id, "status": r.status, "best_score": r.best_score}),
        );
        println!(
            "trial {:>4} {:<14} best {}",
            r.trial_id,
            format!("{:?}", r.status),
            r.best_score.map_or("-".into(), |s| format!("{s:.4}"))
        );
    }
    let failed = outcomes.iter().filter(|o| o.record.status == TrialStatus::Failed).count();
    println!(
        "{}: {} trials in {} ({failed} failed)",
        study.name(),
        store.records().len(),
        dir.join("trials.jsonl").display()
    );
    Ok(())
}

fn train(cfg: &RunConfig, l: &Layout, params: Option<PathBuf>, log: &RunLog) -> Result<()> {
    let params: Option<Params> = match params {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let prep = prepared(cfg, l)?;
    let study = study_of(cfg);
    let dir = l.root.join("train").join(study.name());
    let out = train_single(&prep, &study, &study_settings(cfg), params, cfg.tuner.seed, Some(&dir))?;
    let rec = &out.record;
    let rec_path = dir.join("record.json");
    std::fs::write(&rec_path, serde_json::to_string_pretty(rec).expect("record serializes")).map_err(io(&rec_path))?;
    save_config(cfg, &dir, "train")?;
    log.event("artifact", json!({"path": rec_path.display().to_string(), "status": rec.status, "checkpoint": rec.checkpoint_ref}));
    if rec.status == TrialStatus::Failed {
        return Err(CliError::Runtime(format!("training failed: {}", rec.message.as_deref().unwrap_or("unknown"))));
    }
    println!(
        "{:?}, best validation {} -> {}",
        rec.status,
        rec.best_score.map_or("-".into(), |s| format!("{s:.4}")),
        rec.checkpoint_ref.as_ref().map_or(rec_path.clone(), |c| dir.join(c)).display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path, prep: &Prepared) -> Result<AgentCheckpoint> {
    let ck = AgentCheckpoint::load(path)?;
    check_features(&ck, prep.data(ck.no_llm))?;
    Ok(ck)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("agent".into(), |s| s.to_string_lossy().into_owned())
}

fn evaluate(cfg: &RunConfig, l: &Layout, checkpoint: &Path, log: &RunLog) -> Result<()> {
    let prep = prepared(cfg, l)?;
    let ck = load_checkpoint(checkpoint, &prep)?;
    let e = cfg.eval_settings();
    let summary = evaluate_periods(
        &ck.network,
        prep.data(ck.no_llm),
        &e.env,
        prep.split.test.clone(),
        SplitTag::Test,
        e.periods,
        e.length,
        e.seed,
    )?;
    let dir = l.root.join("eval");
    let out = dir.join(format!("{}.json", stem(checkpoint)));
    serde_json::to_writer_pretty(create(&out)?, &summary).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    save_config(cfg, &dir, "evaluate")?;
    log.event("artifact", json!({"path": out.display().to_string(), "mean_usdt": summary.mean_usdt}));
    println!(
        "{} periods of {} minutes: mean {:.4} USDT ({:.4}%) -> {}",
        e.periods,
        e.length,
        summary.mean_usdt,
        summary.mean_pct * 100.0,
        out.display()
    );
    Ok(())
}

fn backtest(cfg: &RunConfig, l: &Layout, checkpoint: &Path, log: &RunLog) -> Result<()> {
    let prep = prepared(cfg, l)?;
    let ck = load_checkpoint(checkpoint, &prep)?;
    let data = prep.data(ck.no_llm);
    let curve = full_backtest(&ck.network, data, &cfg.env_config(), prep.split.test.clone())?;
    let dir = l.root.join("backtest");
    let out = dir.join(format!("{}.csv", stem(checkpoint)));
    {
        use std::io::Write;
        let mut w = create(&out)?;
        let mut body = String::from("ts,equity_usdt,side\n");
        for p in &curve.points {
            body.push_str(&format!("{},{:.6},{}\n", p.ts, p.equity, p.side.name()));
        }
        w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io(&out))?;
    }
    save_config(cfg, &dir, "backtest")?;
    let base = baseline_buy_hold(data, prep.split.test.clone());
    log.event("artifact", json!({"path": out.display().to_string(), "pct_return": curve.pct_return}));
    println!(
        "test backtest {:.4}% (buy and hold {:.4}%) -> {}",
        curve.pct_return * 100.0,
        base * 100.0,
        out.display()
    );
    Ok(())
}

fn report(cfg: &RunConfig, l: &Layout, log: &RunLog) -> Result<()> {
    let prep = prepared(cfg, l)?;
    let settings = cfg.eval_settings();
    let mut results = Vec::new();
    for study in Study::table_grid() {
        let dir = study_dir(&l.studies, &study);
        let store = dir.join("trials.jsonl");
        if !store.exists() {
            continue;
        }
        let store = newsrl::tuner::TrialStore::open(&store)?;
        if !store.records().iter().any(|r| r.is_rankable()) {
            log::warn!("{}: no finished trials, skipped", study.name());
            continue;
        }
        results.push(evaluate_study(&prep, &study, store.records(), checkpoint_loader(&dir), &settings)?);
    }
    if results.is_empty() {
        return Err(CliError::Data(format!("no tuned configurations under {}", l.studies.display())));
    }
    let notes = vec![format!(
        "{} test periods of {} minutes, window seed {}",
        settings.periods, settings.length, settings.seed
    )];
    let report = build_report(&prep, &results, notes);
    let dir = l.root.join("report");
    emit_report(&report, &dir)?;
    save_config(cfg, &dir, "report")?;
    log.event("artifact", json!({"path": dir.display().to_string(), "configurations": results.len()}));
    for r in &results {
        println!(
            "{:<24} top1 {:>10.4} USDT {:>9.4}%",
            r.study.name(),
            r.top_usdt(1).unwrap_or(f64::NAN),
            r.top_pct(1).unwrap_or(f64::NAN)
        );
    }
    println!("report -> {}", dir.display());
    Ok(())
}

fn selftest(cfg: &RunConfig, l: &Layout, trials: usize, desk: bool, mlp_only: bool, log: &RunLog) -> Result<()> {
    let budget = if desk { Budget::desk() } else { Budget::smoke() };
    let mut st = SelftestConfig::new(l.root.join("selftest"), cfg.tuner.seed, budget);
    st.trials = trials;
    st.env = cfg.env_config();
    if mlp_only {
        st.studies = mlp_studies();
    }
    let summary = run_selftest(&st)?;
    save_config(cfg, &st.out_dir, "selftest")?;
    for c in &summary.checks {
        println!("[{}] {:<14} {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        log.event("check", json!({"name": c.name, "passed": c.passed, "detail": c.detail}));
    }
    let passed = summary.checks.iter().filter(|c| c.passed).count();
    println!(
        "selftest: {passed}/{} checks passed, report in {}",
        summary.checks.len(),
        summary.report_dir.display()
    );
    if summary.passed() {
        Ok(())
    } else {
        Err(CliError::Runtime("selftest checks failed".into()))
    }
}
