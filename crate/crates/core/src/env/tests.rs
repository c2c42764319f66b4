use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{Bar, FeatureMode, SplitTag, MINUTE_MS};
use crate::synth::{neutral_frames, random_walk_bars, EPOCH_MS};

fn market(bars: Vec<Bar>) -> MarketData {
    let n = bars.len();
    MarketData::build(neutral_frames(&bars), FeatureMode::Returns, 0..n).unwrap()
}

fn flat_bar(i: usize, close: f64) -> Bar {
    Bar {
        ts: EPOCH_MS + i as i64 * MINUTE_MS,
        open: close,
        high: close,
        low: close,
        close,
        volume: 1.0,
    }
}

fn closes(cs: &[f64]) -> MarketData {
    market(cs.iter().enumerate().map(|(i, &c)| flat_bar(i, c)).collect())
}

fn win(start: usize, length: usize) -> EpisodeWindow {
    EpisodeWindow {
        start,
        length,
        split: SplitTag::Train,
    }
}

fn no_sltp() -> EnvConfig {
    EnvConfig {
        sltp: None,
        ..EnvConfig::default()
    }
}

fn long_at(entry: f64) -> Position {
    Position {
        side: Side::Long,
        entry_price: entry,
    }
}

fn hl(high: f64, low: f64) -> Bar {
    Bar {
        ts: 0,
        open: low,
        high,
        low,
        close: low,
        volume: 0.0,
    }
}

#[test]
fn take_profit_fills_at_level() {
    let f = apply_sltp(&long_at(100.0), &hl(100.2, 99.95), 0.001).unwrap();
    assert_eq!(f.reason, FillReason::TakeProfit);
    assert_eq!(f.price, 100.0 * 1.001);
    assert_relative_eq!(f.price - 100.0, 0.1, epsilon = 1e-12);
}

#[test]
fn stop_loss_wins_ties() {
    let f = apply_sltp(&long_at(100.0), &hl(100.15, 99.85), 0.001).unwrap();
    assert_eq!(f.reason, FillReason::StopLoss);
    assert_eq!(f.price, 100.0 * 0.999);
}

#[test]
fn short_take_profit_mirrors() {
    let short = Position {
        side: Side::Short,
        entry_price: 100.0,
    };
    let f = apply_sltp(&short, &hl(100.05, 99.8), 0.001).unwrap();
    assert_eq!(f.reason, FillReason::TakeProfit);
    assert_relative_eq!(100.0 - f.price, 0.1, epsilon = 1e-12);
    assert!(apply_sltp(&short, &hl(100.05, 99.95), 0.001).is_none());
    assert!(apply_sltp(&Position::default(), &hl(1e9, 0.0), 0.001).is_none());
}

#[test]
fn reset_starts_flat_with_fixed_shape() {
    let data = market(random_walk_bars(50, 100.0, 1e-3, 1));
    let mut env = TradingEnv::new(&data, EnvConfig { lookback: 8, ..EnvConfig::default() }).unwrap();
    let o1 = env.reset(win(10, 20)).unwrap();
    assert_eq!(o1.shape(), &[8, 6]);
    assert!(env.position().is_flat());
    assert_eq!(env.realized(), 0.0);
    assert_eq!(env.equity(), 0.0);
    env.step(Action::Long).unwrap();
    let o2 = env.reset(win(10, 20)).unwrap();
    assert_eq!(o1, o2);
    assert!(matches!(env.reset(win(3, 20)), Err(EnvError::Lookback { .. })));
    assert!(matches!(env.reset(win(40, 20)), Err(EnvError::OutOfData { .. })));
}

#[test]
fn basic_rewards() {
    let data = closes(&[100.0, 101.0, 101.0, 99.0]);
    let mut env = TradingEnv::new(&data, no_sltp()).unwrap();
    env.reset(win(0, 4)).unwrap();
    let s = env.step(Action::Long).unwrap();
    assert_eq!(s.reward, 1.0);
    let s = env.step(Action::Hold).unwrap();
    assert_eq!(s.reward, 0.0);
    assert_eq!(env.position().side, Side::Long);
    let s = env.step(Action::Short).unwrap();
    // flipped at 101 and short into 99
    assert_eq!(s.reward, 2.0);
    assert!(s.done);
    assert_eq!(s.fills.len(), 3);
    assert_eq!(s.fills[0].to, Side::Short);
    assert_eq!(s.fills[2].reason, FillReason::EpisodeEnd);
    assert!(env.position().is_flat());
    assert_eq!(env.equity(), 3.0);
    assert!(matches!(env.step(Action::Hold), Err(EnvError::Done)));
}

#[test]
fn flat_hold_is_free() {
    let data = market(random_walk_bars(40, 100.0, 1e-2, 2));
    let mut env = TradingEnv::new(&data, EnvConfig::default()).unwrap();
    env.reset(win(0, 40)).unwrap();
    let mut steps = 0;
    loop {
        let s = env.step(Action::Hold).unwrap();
        assert_eq!(s.reward, 0.0);
        steps += 1;
        if s.done {
            break;
        }
    }
    assert_eq!(steps, 39);
}

#[test]
fn sltp_exit_stays_flat_until_next_action() {
    let bars = vec![flat_bar(0, 100.0), flat_bar(1, 100.5), flat_bar(2, 101.0), flat_bar(3, 101.0)];
    let data = market(bars);
    let mut env = TradingEnv::new(&data, EnvConfig::default()).unwrap();
    env.reset(win(0, 4)).unwrap();
    let s = env.step(Action::Long).unwrap();
    assert!(s.sltp_triggered);
    assert_relative_eq!(s.reward, 0.1, epsilon = 1e-9);
    assert!(env.position().is_flat());
    let s = env.step(Action::Hold).unwrap();
    assert_eq!(s.reward, 0.0);
    assert!(env.position().is_flat());
    assert_eq!(env.trades()[0].reason, FillReason::TakeProfit);
}

#[test]
fn fees_charged_per_fill() {
    let data = closes(&[100.0, 100.0, 100.0]);
    let cfg = EnvConfig {
        fee_bps: 10.0,
        ..no_sltp()
    };
    let mut env = TradingEnv::new(&data, cfg).unwrap();
    env.reset(win(0, 3)).unwrap();
    env.step(Action::Long).unwrap();
    env.step(Action::Short).unwrap();
    // open, close+open, forced close: 4 fills of 0.1
    assert_relative_eq!(env.fees_paid(), 0.4, epsilon = 1e-12);
    assert_relative_eq!(env.equity(), -0.4, epsilon = 1e-12);
    let r = replay_equity(&data, win(0, 3), &[Action::Long, Action::Short], &cfg).unwrap();
    assert_eq!(r.final_equity, env.equity());
}

fn run(env: &mut TradingEnv, window: EpisodeWindow, actions: &[Action]) -> (Vec<f64>, Vec<f64>) {
    env.reset(window).unwrap();
    let mut rewards = Vec::new();
    let mut equity = vec![env.equity()];
    for &a in actions {
        let s = env.step(a).unwrap();
        rewards.push(s.reward);
        equity.push(env.equity());
    }
    assert!(env.is_done());
    (rewards, equity)
}

#[test]
fn accounting_matches_replay_ledger() {
    let data = market(random_walk_bars(3000, 30_000.0, 8e-4, 5));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let length = rng.random_range(2..400);
        let start = rng.random_range(0..data.len() - length);
        let cfg = EnvConfig {
            initial_equity: if trial % 2 == 0 { 0.0 } else { 30_000.0 },
            sltp: if trial % 3 == 0 { None } else { Some(0.001) },
            fee_bps: if trial % 5 == 0 { 2.5 } else { 0.0 },
            lookback: 1,
        };
        let actions: Vec<Action> = (0..length - 1).map(|_| Action::ALL[rng.random_range(0..3)]).collect();
        let mut env = TradingEnv::new(&data, cfg).unwrap();
        let (rewards, equity) = run(&mut env, win(start, length), &actions);
        let total: f64 = rewards.iter().sum();
        assert!((total - (env.equity() - cfg.initial_equity)).abs() <= 1e-9);
        let rep = replay_equity(&data, win(start, length), &actions, &cfg).unwrap();
        assert_eq!(rep.rewards, rewards);
        assert_eq!(rep.equity, equity);
        assert_eq!(rep.final_equity, env.equity());
        assert_eq!(equity.len(), length);
    }
}

#[test]
fn buy_and_hold_replay_matches_closed_form() {
    let data = market(random_walk_bars(500, 100.0, 1e-3, 9));
    let w = win(17, 300);
    let actions = vec![Action::Long; w.length - 1];
    let cfg = EnvConfig {
        initial_equity: data.close(w.start),
        ..no_sltp()
    };
    let r = replay_equity(&data, w, &actions, &cfg).unwrap();
    let expect = data.close(w.last()) / data.close(w.start) - 1.0;
    assert_relative_eq!(r.final_equity / cfg.initial_equity - 1.0, expect, epsilon = 1e-12);
    let hold = replay_equity(&data, w, &vec![Action::Hold; w.length - 1], &cfg).unwrap();
    assert_eq!(hold.final_equity, cfg.initial_equity);
    assert!(replay_equity(&data, w, &actions[1..], &cfg).is_err());
}

#[test]
fn sltp_caps_losses_on_gapless_bars() {
    let data = market(random_walk_bars(5000, 20_000.0, 2e-3, 21));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut env = TradingEnv::new(&data, EnvConfig::default()).unwrap();
    env.reset(win(0, 5000)).unwrap();
    while !env.is_done() {
        env.step(Action::ALL[rng.random_range(0..3)]).unwrap();
    }
    let stops = env.trades().iter().filter(|t| t.reason == FillReason::StopLoss).count();
    assert!(stops > 10);
    for t in env.trades() {
        assert!(t.pnl >= -t.entry * 0.001 * POSITION_SIZE - 1e-9, "{t:?}");
    }
}

#[test]
fn observations_never_read_ahead() {
    let data = market(random_walk_bars(120, 100.0, 1e-2, 4));
    let mut env = TradingEnv::new(&data, EnvConfig { lookback: 5, ..no_sltp() }).unwrap();
    let w = win(10, 100);
    let mut obs = env.reset(w).unwrap();
    loop {
        let t = env.cursor();
        let expect = data.features.window(t, 5, 6, data.close(w.start));
        assert_eq!(obs, expect);
        assert_eq!(&obs.data()[4 * 6..], &data.features.row(t, 1.0));
        let s = env.step(Action::Hold).unwrap();
        obs = s.observation;
        if s.done {
            break;
        }
    }
}

#[test]
fn padded_reset_clamps_to_floor() {
    let data = market(random_walk_bars(30, 100.0, 1e-2, 4));
    let mut env = TradingEnv::new(&data, EnvConfig { lookback: 4, ..no_sltp() }).unwrap();
    let o = env.reset_padded(win(10, 5), 10).unwrap();
    let row = data.features.row(10, 1.0);
    for k in 0..4 {
        assert_eq!(&o.data()[k * 6..(k + 1) * 6], &row);
    }
}

#[test]
fn trace_csv_layout() {
    let data = closes(&[100.0, 100.2, 100.0]);
    let mut env = TradingEnv::new(&data, EnvConfig::default()).unwrap();
    env.reset(win(0, 3)).unwrap();
    let mut rows = Vec::new();
    for (k, a) in [Action::Long, Action::Hold].into_iter().enumerate() {
        let s = env.step(a).unwrap();
        rows.push(TraceRow::new(k, data.frames[env.cursor()].ts(), a, env.position().side, env.equity(), &s));
    }
    let mut buf = Vec::new();
    write_trace_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,ts,action,side,fill_price,reward,equity,sltp");
    assert!(lines[1].starts_with(&format!("0,{},long,flat,", EPOCH_MS + MINUTE_MS)));
    assert!(lines[1].ends_with(",tp"));
    let last: Vec<&str> = lines[2].split(',').collect();
    assert_eq!((last[2], last[3], last[4], last[5], last[7]), ("hold", "flat", "", "0", ""));
}
