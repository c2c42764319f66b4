//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails, apart from documented known gaps.
//!
//! `NEWSRL_ACCEPT_DESK=1` runs the end-to-end criterion at the desk-scale
//! budget (hours on a single core) instead of the smoke budget.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use newsrl::agents::{
    greedy_action, grpo_advantages, train_ddqn, train_grpo, Algo, Ddqn, DdqnHyper, Grpo, GrpoHyper, TabularQ,
    TrainCtx, Transition,
};
use newsrl::data::{
    chronological_split, parse_bars, parse_news, sample_windows, AlignedFrame, Bar, EpisodeWindow, FeatureMode,
    MarketData, SplitTag, DEFAULT_BOUNDARIES, NEUTRAL_SCORE,
};
use newsrl::env::{apply_sltp, replay_equity, Action, EnvConfig, FillReason, Position, Side, TradingEnv, POSITION_SIZE};
use newsrl::eval::{evaluate_periods, evaluate_windows, topk_average, TABLE_HEADER, TABLE_ROWS};
use newsrl::nn::{LstmConfig, MlpConfig, Model, NetConfig, Network, ObsBatch, TransformerConfig, N_ACTIONS};
use newsrl::pipeline::{align, Prepared};
use newsrl::selftest::{
    mlp_studies, run_selftest, SelftestConfig, FIXTURE_BARS, FIXTURE_MODEL, FIXTURE_NEWS, FIXTURE_RESPONSES,
};
use newsrl::sentiment::{
    build_prompt, pack_batches, parse_scores, score_news, FixtureBackend, ScoreCache, ScoreConfig, ScoredNews,
    DEFAULT_ASSET, DEFAULT_CHAR_BUDGET, MAX_SCORE, MIN_SCORE,
};
use newsrl::synth::{drift_sine_bars, keyword_scores, neutral_frames, random_walk_bars};
use newsrl::tuner::{check_early_stop, rank_trials, Budget, TrialRecord, TrialStatus};
use newsrl::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Aligned bundled fixture with keyword scores as the sentiment source.
fn fixture_frames() -> Vec<AlignedFrame> {
    let bars = parse_bars(FIXTURE_BARS.as_bytes()).unwrap().bars;
    let news = parse_news(FIXTURE_NEWS.as_bytes()).unwrap();
    align(&bars, &news, &keyword_scored(&news))
}

fn keyword_scored(news: &[newsrl::data::NewsItem]) -> Vec<ScoredNews> {
    news.iter()
        .map(|n| {
            let (sentiment, risk) = keyword_scores(&n.title);
            ScoredNews {
                news_id: n.id.clone(),
                sentiment,
                risk,
                model_id: FIXTURE_MODEL.into(),
                prompt_hash: String::new(),
                template_hash: String::new(),
            }
        })
        .collect()
}

fn fixture_prepared() -> Prepared {
    Prepared::new(fixture_frames(), FeatureMode::Returns, DEFAULT_BOUNDARIES).unwrap()
}

// 1 -----------------------------------------------------------------------

fn grad_check(net: &Network<f64>, obs: &ObsBatch<f64>, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let coef: Vec<f64> = (0..obs.batch * N_ACTIONS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss_of = |n: &Network<f64>| -> f64 {
        let s = n.scores(obs).unwrap();
        s.data().iter().zip(&coef).map(|(a, b)| a * b).sum()
    };
    let mut tape = Tape::new();
    let bound = net.params.bind(&mut tape, true).map_err(err)?;
    let out = net.forward(&mut tape, &bound, obs).map_err(err)?;
    let c = tape.constant(Tensor::new(vec![obs.batch, N_ACTIONS], coef.clone()).unwrap()).map_err(err)?;
    let prod = tape.mul(out, c).map_err(err)?;
    let loss = tape.sum(prod).map_err(err)?;
    let grads = tape.backward(loss).map_err(err)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (name, var) in bound.vars() {
        let analytic = grads.get(var);
        for i in 0..analytic.numel() {
            let mut hi = net.clone();
            hi.params.get_mut(name).unwrap().data_mut()[i] += h;
            let mut lo = net.clone();
            lo.params.get_mut(name).unwrap().data_mut()[i] -= h;
            let numeric = (loss_of(&hi) - loss_of(&lo)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
            ensure(rel < 1e-4, || format!("{name}[{i}] seed {seed}: analytic {a} numeric {numeric}"))?;
        }
    }
    Ok(worst)
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut window = |w: usize| Tensor::new(vec![w, 6], (0..w * 6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut worst = 0.0f64;
    let mut params = 0;
    for seed in 0..20 {
        let configs = [
            NetConfig::Mlp(MlpConfig { h1: 8, h2: 6 }),
            NetConfig::Lstm(LstmConfig {
                hidden: 5,
                layers: 2,
                window: 4,
            }),
            NetConfig::Transformer(TransformerConfig {
                layers: 1,
                heads: 2,
                model_dim: 8,
                ff_dim: 16,
                pos_init_std: 0.5,
                window: 4,
            }),
        ];
        for cfg in configs {
            let net = Network::<f64>::init(cfg, 6, seed).map_err(err)?;
            let w = net.lookback();
            let obs = ObsBatch::from_windows(&[window(w), window(w)]).map_err(err)?;
            worst = worst.max(grad_check(&net, &obs, seed)?);
            params += net.params.numel();
        }
    }
    Ok(format!("{params} parameter gradients over 20 seeds, worst relative error {worst:.1e}"))
}

// 2 -----------------------------------------------------------------------

fn accounting() -> Outcome {
    let prep = fixture_prepared();
    let data = &prep.data;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let length = rng.random_range(2..400);
        let start = rng.random_range(0..data.len() - length);
        let w = EpisodeWindow {
            start,
            length,
            split: SplitTag::Train,
        };
        let cfg = EnvConfig {
            initial_equity: if rng.random::<bool>() { 0.0 } else { data.close(start) },
            fee_bps: if rng.random::<bool>() { 0.0 } else { 7.5 },
            sltp: if rng.random::<bool>() { None } else { Some(0.001) },
            ..EnvConfig::default()
        };
        let actions: Vec<Action> = (1..length).map(|_| Action::ALL[rng.random_range(0..3)]).collect();
        let mut env = TradingEnv::new(data, cfg).map_err(err)?;
        env.reset(w).map_err(err)?;
        let mut sum = 0.0;
        for &a in &actions {
            sum += env.step(a).map_err(err)?.reward;
        }
        let id = (sum - (env.equity() - cfg.initial_equity)).abs();
        worst = worst.max(id);
        ensure(id <= 1e-9, || format!("window {w:?}: identity off by {id:e}"))?;
        let rep = replay_equity(data, w, &actions, &cfg).map_err(err)?;
        ensure(rep.final_equity == env.equity(), || format!("window {w:?}: env {} replay {}", env.equity(), rep.final_equity))?;
    }
    // evaluation figures against a hand-driven greedy rollout
    let env_cfg = EnvConfig::default();
    let windows = sample_windows(prep.split.test.clone(), SplitTag::Test, 200, 1, 50, 9).map_err(err)?;
    for seed in 0..4 {
        let net = Network::<f64>::init(NetConfig::Mlp(MlpConfig { h1: 16, h2: 16 }), 6, seed).map_err(err)?;
        let res = evaluate_windows(&net, data, &env_cfg, &windows).map_err(err)?;
        for (r, w) in res.iter().zip(&windows) {
            let mut env = TradingEnv::new(data, env_cfg).map_err(err)?;
            let mut obs = env.reset(*w).map_err(err)?;
            let mut actions = Vec::new();
            let mut sum = 0.0;
            while !env.is_done() {
                let a = Action::ALL[greedy_action(&net, &obs).map_err(err)?];
                let out = env.step(a).map_err(err)?;
                actions.push(a);
                sum += out.reward;
                obs = out.observation;
            }
            let rep = replay_equity(data, *w, &actions, &env_cfg).map_err(err)?;
            ensure(r.cumulative_return_usdt == rep.final_equity, || format!("window {w:?}: reported {} replay {}", r.cumulative_return_usdt, rep.final_equity))?;
            ensure((sum - r.cumulative_return_usdt).abs() <= 1e-9, || format!("window {w:?}: rewards {sum}"))?;
        }
    }
    Ok(format!("1000 random episodes, worst identity error {worst:.1e}; 200 evaluated windows equal the replay ledger"))
}

// 3 -----------------------------------------------------------------------

fn bar(high: f64, low: f64) -> Bar {
    Bar {
        ts: 0,
        open: 100.0,
        high,
        low,
        close: 100.0,
        volume: 1.0,
    }
}

fn sltp() -> Outcome {
    let long = Position {
        side: Side::Long,
        entry_price: 100.0,
    };
    let short = Position {
        side: Side::Short,
        entry_price: 100.0,
    };
    let tp = apply_sltp(&long, &bar(100.2, 99.95), 0.001).ok_or("long TP missing")?;
    ensure(tp.reason == FillReason::TakeProfit && tp.price == 100.0 * 1.001, || format!("long TP {tp:?}"))?;
    ensure((tp.price - 100.0 - 0.1).abs() < 1e-12, || "long TP gain".into())?;
    let sl = apply_sltp(&long, &bar(100.15, 99.85), 0.001).ok_or("tie fill missing")?;
    ensure(sl.reason == FillReason::StopLoss && sl.price == 100.0 * 0.999, || format!("tie {sl:?}"))?;
    let stp = apply_sltp(&short, &bar(100.05, 99.8), 0.001).ok_or("short TP missing")?;
    ensure(stp.reason == FillReason::TakeProfit && stp.price == 100.0 * 0.999, || format!("short TP {stp:?}"))?;
    ensure((100.0 - stp.price - 0.1).abs() < 1e-12, || "short TP gain".into())?;

    let bars = random_walk_bars(20_000, 30_000.0, 2e-3, 3);
    let data = MarketData::build(neutral_frames(&bars), FeatureMode::Returns, 0..20_000).map_err(err)?;
    let mut env = TradingEnv::new(&data, EnvConfig::default()).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    env.reset(EpisodeWindow {
        start: 0,
        length: 20_000,
        split: SplitTag::Test,
    })
    .map_err(err)?;
    while !env.is_done() {
        env.step(Action::ALL[rng.random_range(0..3)]).map_err(err)?;
    }
    let mut worst = 0.0f64;
    for t in env.trades() {
        let loss_frac = -t.pnl / (t.entry * POSITION_SIZE);
        worst = worst.max(loss_frac);
        ensure(loss_frac <= 0.001 + 1e-12, || format!("trade lost {loss_frac:.6} of notional: {t:?}"))?;
    }
    let stops = env.trades().iter().filter(|t| t.reason == FillReason::StopLoss).count();
    ensure(stops > 100, || format!("only {stops} stop-loss exits"))?;
    Ok(format!(
        "worked examples exact; {} trades ({stops} stop-outs), worst loss {:.4}% of notional",
        env.trades().len(),
        worst * 100.0
    ))
}

// 4 -----------------------------------------------------------------------

fn chain_step(s: usize, a: usize) -> (usize, f64) {
    let s2 = match a {
        0 => s.saturating_sub(1),
        1 => (s + 1).min(4),
        _ => s,
    };
    (s2, if s2 == 4 { 1.0 } else { 0.0 })
}

fn tabular() -> Outcome {
    let gamma = 0.9;
    let mut q = [[0.0f64; 3]; 5];
    for _ in 0..2000 {
        let prev = q;
        for (s, row) in q.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                let (s2, r) = chain_step(s, a);
                *v = r + gamma * prev[s2].iter().copied().fold(f64::MIN, f64::max);
            }
        }
    }
    let m = TabularQ::new(5, 0.0);
    let hyper = DdqnHyper {
        gamma,
        batch_size: 32,
        replay_capacity: 2000,
        horizon_len: 1,
        tau: 0.05,
        lr: 0.05,
        weight_decay: 0.0,
        grad_clip: 10.0,
        epsilon_start: 1.0,
        epsilon_decay: 1.0,
        ..DdqnHyper::default()
    };
    let mut agent = Ddqn::new(m.clone(), hyper, 4).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = 0;
    for _ in 0..2000 {
        let a = rng.random_range(0..3);
        let (s2, r) = chain_step(s, a);
        agent.observe(Transition {
            state: m.one_hot(s),
            action: a,
            reward: r,
            next_state: m.one_hot(s2),
            done: false,
        });
        s = if rng.random::<f64>() < 0.1 { rng.random_range(0..5) } else { s2 };
    }
    for _ in 0..6000 {
        agent.update().map_err(err)?;
    }
    let learned = agent.online.table().data();
    let mut worst = 0.0f64;
    for (s, row) in q.iter().enumerate() {
        for (a, v) in row.iter().enumerate() {
            worst = worst.max((learned[s * 3 + a] - v).abs());
        }
    }
    ensure(worst < 1e-2, || format!("max |Q - Q*| = {worst:.4}"))?;
    Ok(format!("max |Q - Q*| = {worst:.2e} over 15 state-action pairs"))
}

// 5 -----------------------------------------------------------------------

fn grpo_norm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let floor = 1e-8;
    let mut checked = 0;
    for _ in 0..1000 {
        let g = rng.random_range(2..33);
        let spread = 10f64.powf(rng.random_range(-3.0..3.0));
        let r: Vec<f64> = (0..g).map(|_| rng.random_range(-1.0..1.0) * spread).collect();
        let n = g as f64;
        let mean_r = r.iter().sum::<f64>() / n;
        let std_r = (r.iter().map(|x| (x - mean_r).powi(2)).sum::<f64>() / n).sqrt();
        if std_r <= floor {
            continue;
        }
        checked += 1;
        let a = grpo_advantages(&r, floor);
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        ensure(mean.abs() < 1e-9 && (std - 1.0).abs() < 1e-9, || format!("mean {mean:e} std {std}"))?;
        let shift = rng.random_range(-1e3..1e3);
        let b = grpo_advantages(&r.iter().map(|x| x + shift).collect::<Vec<_>>(), floor);
        ensure(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9), || "not shift invariant".into())?;
    }

    let bars = drift_sine_bars(400, 100.0, 0.0, 0.02, 40.0);
    let data = MarketData::build(neutral_frames(&bars), FeatureMode::Returns, 0..400).map_err(err)?;
    let env = TradingEnv::new(&data, EnvConfig { sltp: None, ..EnvConfig::default() }).map_err(err)?;
    let hyper = GrpoHyper {
        group_size: 6,
        repeat_times: 2,
        batch_size: 64,
        lr: 1e-2,
        ..GrpoHyper::default()
    };
    let mut states = 0;
    for seed in 0..10 {
        let net = Network::<f64>::init(NetConfig::Mlp(MlpConfig { h1: 16, h2: 16 }), 6, seed).map_err(err)?;
        let mut agent = Grpo::new(net, hyper.clone(), seed).map_err(err)?;
        let w = EpisodeWindow {
            start: 5 + 20 * seed as usize,
            length: 40,
            split: SplitTag::Train,
        };
        let group = agent.collect(&env, w, 1.0).map_err(err)?;
        let k = rng.random_range(0.01..100.0);
        let mut scaled = group.clone();
        scaled.advantages = grpo_advantages(&group.returns.iter().map(|x| x * k).collect::<Vec<_>>(), floor);
        let (mut a, mut b) = (agent.clone(), agent);
        a.update(&group).map_err(err)?;
        b.update(&scaled).map_err(err)?;
        for t in &group.trajectories {
            for s in &t.states {
                let (x, y) = (greedy_action(&a.policy, s).map_err(err)?, greedy_action(&b.policy, s).map_err(err)?);
                ensure(x == y, || format!("seed {seed}: argmax {x} vs {y} after rescaling by {k}"))?;
                states += 1;
            }
        }
    }
    Ok(format!("{checked} groups standardized and shift invariant; argmax unchanged on {states} states after rescaling"))
}

// 6 -----------------------------------------------------------------------

fn sanity_market() -> MarketData {
    let bars = drift_sine_bars(4000, 100.0, 5e-4, 0.1, 40.0);
    MarketData::build(neutral_frames(&bars), FeatureMode::Returns, 0..3000).unwrap()
}

/// Agent return over held-out windows as a fraction of the sign-of-next-
/// return oracle on the same windows.
fn oracle_fraction<M: Model<f64>>(model: &M, data: &MarketData, env: &EnvConfig) -> Result<f64, String> {
    let windows: Vec<EpisodeWindow> = (0..9)
        .map(|i| EpisodeWindow {
            start: 3001 + 100 * i,
            length: 100,
            split: SplitTag::Test,
        })
        .collect();
    let got: f64 = evaluate_windows(model, data, env, &windows)
        .map_err(err)?
        .iter()
        .map(|r| r.cumulative_return_usdt)
        .sum();
    let mut oracle = 0.0;
    for w in &windows {
        let actions: Vec<Action> = (w.start..w.last())
            .map(|t| if data.close(t + 1) > data.close(t) { Action::Long } else { Action::Short })
            .collect();
        oracle += replay_equity(data, *w, &actions, env).map_err(err)?.final_equity;
    }
    Ok(got / oracle)
}

fn learning() -> Outcome {
    let data = sanity_market();
    let env = EnvConfig {
        sltp: None,
        ..EnvConfig::default()
    };
    let ctx = TrainCtx {
        data: &data,
        env,
        range: 0..3000,
        episode_len: 100,
        normalize_rewards: true,
    };
    let mlp = NetConfig::Mlp(MlpConfig { h1: 64, h2: 64 });
    let (mut ddqn, mut grpo) = (Vec::new(), Vec::new());
    for seed in 0..3u64 {
        let hyper = DdqnHyper {
            gamma: 0.9,
            epsilon_start: 0.1,
            epsilon_decay: 0.9999,
            tau: 0.01,
            batch_size: 64,
            horizon_len: 100,
            replay_capacity: 800,
            repeat_times: 2,
            lr: 1e-3,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            ..DdqnHyper::default()
        };
        let mut agent = Ddqn::new(Network::init(mlp.clone(), 6, seed).map_err(err)?, hyper, seed).map_err(err)?;
        train_ddqn(&mut agent, &ctx, 300, seed, None).map_err(err)?;
        ddqn.push(oracle_fraction(&agent.online, &data, &env)?);

        let hyper = GrpoHyper {
            group_size: 8,
            repeat_times: 4,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 1e-4,
            entropy_coef: 0.01,
            kl_target: 0.02,
            ..GrpoHyper::default()
        };
        let mut agent = Grpo::new(Network::init(mlp.clone(), 6, seed).map_err(err)?, hyper, seed).map_err(err)?;
        train_grpo(&mut agent, &ctx, 100, seed, None).map_err(err)?;
        grpo.push(oracle_fraction(&agent.policy, &data, &env)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (d, g) = (mean(&ddqn), mean(&grpo));
    let detail = format!("of the oracle over 3 seeds: DDQN {d:.3} {ddqn:.3?} after 300 episodes, GRPO {g:.3} {grpo:.3?} after 100");
    ensure(d >= 0.9 && g >= 0.9, || detail.clone())?;
    Ok(detail)
}

// 7 -----------------------------------------------------------------------

fn protocol() -> Outcome {
    let s = chronological_split(100, DEFAULT_BOUNDARIES).map_err(err)?;
    ensure(s.train == (0..70) && s.validation == (70..85) && s.test == (85..100), || format!("{s:?}"))?;

    let mut histories = 0;
    for len in 0..=8usize {
        for bits in 0..(1u32 << len) {
            let h: Vec<f64> = (0..len).map(|i| ((bits >> i) & 1) as f64).collect();
            // stop when the best of the last five never beats the best before them
            let want = len > 5 && {
                let before = h[..len - 5].iter().copied().fold(f64::MIN, f64::max);
                h[len - 5..].iter().all(|&x| x <= before)
            };
            ensure(check_early_stop(&h) == want, || format!("history {h:?}"))?;
            histories += 1;
        }
    }

    // 30 finished trials plus two that must never be ranked
    let records: Vec<TrialRecord> = (0..32)
        .map(|i| {
            let mut r = TrialRecord::new(i, Algo::Ddqn, "mlp", false, 0, Default::default());
            r.push_eval(if i < 30 { ((i * 7) % 30) as f64 } else { 100.0 });
            r.status = match i {
                30 => TrialStatus::Failed,
                31 => TrialStatus::Running,
                _ if i % 2 == 0 => TrialStatus::EarlyStopped,
                _ => TrialStatus::Completed,
            };
            r
        })
        .collect();
    let top = rank_trials(&records, 10).map_err(err)?;
    let scores: Vec<f64> = top.iter().map(|r| r.best_score.unwrap()).collect();
    ensure(scores == (20..30).rev().map(f64::from).collect::<Vec<_>>(), || format!("{scores:?}"))?;
    let (mean, each) = topk_average(&top, 10, |r| Ok(r.best_score.unwrap() * 2.0)).map_err(err)?;
    ensure(mean == 49.0 && each.len() == 10, || format!("top-10 mean {mean}"))?;
    let (one, _) = topk_average(&top, 1, |r| Ok(r.best_score.unwrap())).map_err(err)?;
    ensure(one == 29.0, || format!("top-1 {one}"))?;

    let bars = random_walk_bars(24_000, 100.0, 1e-3, 7);
    let n = bars.len();
    let data = MarketData::build(neutral_frames(&bars), FeatureMode::Returns, 0..n * 7 / 10).map_err(err)?;
    let split = chronological_split(n, DEFAULT_BOUNDARIES).map_err(err)?;
    let net = Network::<f64>::init(NetConfig::Mlp(MlpConfig { h1: 8, h2: 8 }), 6, 7).map_err(err)?;
    let full = Budget::full();
    let sum = evaluate_periods(
        &net,
        &data,
        &EnvConfig::default(),
        split.test.clone(),
        SplitTag::Test,
        full.n_eval,
        full.eval_len,
        full.eval_seed,
    )
    .map_err(err)?;
    ensure(sum.results.len() == 256, || format!("{} windows", sum.results.len()))?;
    ensure(
        sum.results.iter().all(|r| r.length == 3000 && r.start >= split.test.start && r.start + r.length <= split.test.end),
        || "window outside the test split".into(),
    )?;
    Ok(format!(
        "split 70/15/15; {histories} early-stop histories; top-1/top-10 arithmetic; 256 x 3000-minute windows"
    ))
}

// 8 -----------------------------------------------------------------------

fn sentiment() -> Outcome {
    let news = parse_news(FIXTURE_NEWS.as_bytes()).map_err(err)?;
    let recorded: HashMap<String, String> = FIXTURE_RESPONSES
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["prompt_hash"].as_str().unwrap().to_string(), v["response"].as_str().unwrap().to_string())
        })
        .collect();
    // golden scores straight from the recorded responses
    let mut golden = HashMap::new();
    for batch in pack_batches(&news, DEFAULT_ASSET, DEFAULT_CHAR_BUDGET) {
        let b = build_prompt(&batch, DEFAULT_ASSET, DEFAULT_CHAR_BUDGET).map_err(err)?;
        let resp = recorded.get(&b.prompt_hash).ok_or("prompt without a recorded response")?;
        let pairs = parse_scores(resp, batch.len()).map_err(err)?;
        for (item, p) in batch.iter().zip(pairs) {
            golden.insert(item.id.clone(), p);
        }
    }
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("scores.jsonl");
    let backend = FixtureBackend::parse(FIXTURE_MODEL, FIXTURE_RESPONSES.as_bytes()).map_err(err)?;
    let mut cache = ScoreCache::open(&path).map_err(err)?;
    let scored = score_news(&news, &backend, &mut cache, &ScoreConfig::default()).map_err(err)?;
    let calls = backend.calls();
    for s in &scored {
        ensure(golden.get(&s.news_id) == Some(&(s.sentiment, s.risk)), || format!("{} differs from the recording", s.news_id))?;
    }
    let bytes = std::fs::read(&path).map_err(err)?;
    let reopened = ScoreCache::open(&path).map_err(err)?;
    ensure(
        reopened.records().len() == news.len()
            && reopened.records().iter().all(|r| (MIN_SCORE..=MAX_SCORE).contains(&r.sentiment) && (MIN_SCORE..=MAX_SCORE).contains(&r.risk)),
        || "persisted scores out of range or missing".into(),
    )?;
    let mut cache = reopened;
    let again = score_news(&news, &backend, &mut cache, &ScoreConfig::default()).map_err(err)?;
    ensure(backend.calls() == calls && again == scored, || "second run issued requests".into())?;
    ensure(std::fs::read(&path).map_err(err)? == bytes, || "cache file changed on the second run".into())?;
    Ok(format!("{} items match the recording in {calls} requests; rerun made 0", scored.len()))
}

// 9 -----------------------------------------------------------------------

fn look_ahead() -> Outcome {
    let frames = fixture_frames();
    let news = parse_news(FIXTURE_NEWS.as_bytes()).map_err(err)?;
    for f in &frames {
        // newest news at or before the frame, later file entries winning ties
        let mut want = (NEUTRAL_SCORE, NEUTRAL_SCORE);
        let mut best = i64::MIN;
        for n in &news {
            if n.ts <= f.ts() && n.ts >= best {
                best = n.ts;
                want = keyword_scores(&n.title);
            }
        }
        ensure((f.sentiment, f.risk) == want, || format!("frame {} carries {:?}, expected {want:?}", f.ts(), (f.sentiment, f.risk)))?;
    }
    let prep = fixture_prepared();
    let mut windows = 0;
    for (tag, range) in [
        (SplitTag::Train, prep.split.train.clone()),
        (SplitTag::Validation, prep.split.validation.clone()),
        (SplitTag::Test, prep.split.test.clone()),
    ] {
        for lookback in [1, 10, 50] {
            for seed in 0..20 {
                for w in sample_windows(range.clone(), tag, 150, lookback, 16, seed).map_err(err)? {
                    ensure(w.start + 1 >= range.start + lookback && w.end() <= range.end, || format!("{w:?} crosses {range:?}"))?;
                    windows += 1;
                }
            }
        }
        // padded episodes that start at the boundary never read below it
        let cfg = EnvConfig {
            lookback: 50,
            ..EnvConfig::default()
        };
        let mut env = TradingEnv::new(&prep.data, cfg).map_err(err)?;
        let obs = env
            .reset_padded(
                EpisodeWindow {
                    start: range.start,
                    length: 10,
                    split: tag,
                },
                range.start,
            )
            .map_err(err)?;
        let first = &obs.data()[..6];
        ensure(obs.data().chunks(6).all(|r| r == first), || format!("{tag:?}: padded rows differ"))?;
    }
    Ok(format!("{} frames match the brute-force fill; {windows} sampled windows stay inside their split", frames.len()))
}

// 10 ----------------------------------------------------------------------

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Returns `(passed, detail, known_gap)`.
fn end_to_end() -> (bool, String, bool) {
    let desk = std::env::var("NEWSRL_ACCEPT_DESK").is_ok_and(|v| v == "1");
    let budget = if desk { Budget::desk() } else { Budget::smoke() };
    let run = || -> Result<String, String> {
        let root = tempfile::tempdir().map_err(err)?;
        let t = Instant::now();
        let cfg = SelftestConfig::new(root.path().join("a"), 1, budget);
        let summary = run_selftest(&cfg).map_err(err)?;
        let secs = t.elapsed().as_secs_f64();
        if let Some(c) = summary.checks.iter().find(|c| !c.passed) {
            return Err(format!("selftest check {} failed: {}", c.name, c.detail));
        }
        let report = &summary.report_dir;
        for t in ["table1.csv", "table2.csv"] {
            let text = std::fs::read_to_string(report.join(t)).map_err(err)?;
            let mut lines = text.lines();
            ensure(lines.next() == Some(TABLE_HEADER), || format!("{t} header"))?;
            let rows: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
            ensure(rows == TABLE_ROWS, || format!("{t} rows {rows:?}"))?;
            ensure(text.lines().skip(1).all(|l| l.split(',').count() == 5), || format!("{t} columns"))?;
        }
        let svg = std::fs::read_to_string(report.join("backtest.svg")).map_err(err)?;
        ensure(svg.matches("class=\"curve\"").count() == 10 && svg.contains("class=\"baseline\""), || "svg polylines".into())?;

        // determinism: same seed twice on the cheap configurations, and the
        // same trials as inside the full run
        let mut small = SelftestConfig::new(root.path().join("b"), 1, budget);
        small.studies = mlp_studies();
        run_selftest(&small).map_err(err)?;
        let first = files_in(&root.path().join("b"));
        small.out_dir = root.path().join("c");
        run_selftest(&small).map_err(err)?;
        ensure(first == files_in(&root.path().join("c")), || "rerun with the same seed changed the artifacts".into())?;
        for s in mlp_studies() {
            let rel = format!("studies/{}/trials.jsonl", s.name());
            let full = std::fs::read(root.path().join("a").join(&rel)).map_err(err)?;
            let solo = std::fs::read(root.path().join("b").join(&rel)).map_err(err)?;
            ensure(full == solo, || format!("{rel} differs between runs"))?;
        }
        Ok(format!(
            "10 configurations x 5 trials, {} env steps per trial, all 7 selftest checks, tables and SVG, byte-identical rerun; pipeline {secs:.0} s",
            budget.train_steps
        ))
    };
    match catch_unwind(AssertUnwindSafe(run)) {
        Ok(Ok(d)) if desk => (true, d, false),
        Ok(Ok(d)) => (
            false,
            format!(
                "{d}. Known gap: this used the smoke budget; the desk-scale budget ({} steps per trial) takes hours on one core (NEWSRL_ACCEPT_DESK=1 runs it)",
                Budget::desk().train_steps
            ),
            true,
        ),
        Ok(Err(e)) => (false, e, false),
        Err(_) => (false, "panicked".into(), false),
    }
}

fn main() {
    type Criterion = (&'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("gradient correctness", 60, gradients),
        ("accounting identity", 60, accounting),
        ("SL/TP semantics", 10, sltp),
        ("DDQN tabular fixed point", 30, tabular),
        ("GRPO normalization", 30, grpo_norm),
        ("learning sanity", 600, learning),
        ("protocol fidelity", 120, protocol),
        ("sentiment pipeline", 10, sentiment),
        ("no look-ahead", 10, look_ahead),
    ];
    // optional criterion numbers on the command line select a subset
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| only.is_empty() || only.contains(&n);
    let mut failures = 0;
    let line = |n: usize, name: &str, ok: bool, secs: f64, detail: &str| {
        println!("acceptance {n:>2} [{}] {name} ({secs:.1} s): {detail}", if ok { "PASS" } else { "FAIL" });
    };
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        if !selected(i + 1) {
            continue;
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match res {
            Ok(d) if Duration::from_secs_f64(secs) <= Duration::from_secs(*limit) => (true, d),
            Ok(d) => (false, format!("{d}; over the {limit} s limit")),
            Err(e) => (false, e),
        };
        failures += usize::from(!ok);
        line(i + 1, name, ok, secs, &detail);
    }
    if selected(10) {
        let t = Instant::now();
        let (ok, detail, gap) = end_to_end();
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = if ok && secs > 900.0 { (false, format!("{detail}; over the 900 s limit")) } else { (ok, detail) };
        failures += usize::from(!ok && !gap);
        line(10, "end-to-end desk run", ok, secs, &detail);
    }
    if failures > 0 {
        println!("acceptance: {failures} criterion(s) failed");
        std::process::exit(1);
    }
}
