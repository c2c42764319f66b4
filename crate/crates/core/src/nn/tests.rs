use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_window(rng: &mut ChaCha8Rng, w: usize, f: usize) -> Tensor<f64> {
    Tensor::new(vec![w, f], (0..w * f).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tf(window: usize, model_dim: usize, heads: usize, layers: usize) -> NetConfig {
    NetConfig::Transformer(TransformerConfig {
        layers,
        heads,
        model_dim,
        ff_dim: 16,
        pos_init_std: 0.5,
        window,
    })
}

/// Checks every parameter gradient of `sum(coef * scores)` against
/// central differences.
fn grad_check(net: &Network<f64>, obs: &ObsBatch<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let coef: Vec<f64> = (0..obs.batch * N_ACTIONS).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss_of = |n: &Network<f64>| -> f64 {
        let s = n.scores(obs).unwrap();
        s.data().iter().zip(&coef).map(|(a, b)| a * b).sum()
    };
    let mut tape = Tape::new();
    let bound = net.params.bind(&mut tape, true).unwrap();
    let out = net.forward(&mut tape, &bound, obs).unwrap();
    let c = tape.constant(Tensor::new(vec![obs.batch, N_ACTIONS], coef.clone()).unwrap()).unwrap();
    let prod = tape.mul(out, c).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();
    let h = 1e-5;
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
            assert!(rel < 1e-4, "{name}[{i}]: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn init_is_deterministic() {
    for cfg in [
        NetConfig::Mlp(MlpConfig { h1: 8, h2: 4 }),
        NetConfig::Lstm(LstmConfig {
            hidden: 5,
            layers: 2,
            window: 4,
        }),
        tf(4, 8, 2, 2),
    ] {
        let a = Network::<f64>::init(cfg, 6, 42).unwrap();
        let b = Network::<f64>::init(cfg, 6, 42).unwrap();
        assert_eq!(a, b);
        let c = Network::<f64>::init(cfg, 6, 43).unwrap();
        assert_ne!(a, c);
    }
}

#[test]
fn positional_std_tracks_config() {
    for std in [0.02, 0.3, 1.0] {
        let cfg = NetConfig::Transformer(TransformerConfig {
            layers: 1,
            heads: 4,
            model_dim: 64,
            ff_dim: 32,
            pos_init_std: std,
            window: 50,
        });
        let net = Network::<f64>::init(cfg, 6, 7).unwrap();
        let pos = net.params.get("pos").unwrap().data();
        let mean = pos.iter().sum::<f64>() / pos.len() as f64;
        let sd = (pos.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / pos.len() as f64).sqrt();
        assert!((sd / std - 1.0).abs() < 0.2, "std {std}: sampled {sd}");
    }
}

#[test]
fn head_dim_and_divisibility() {
    let NetConfig::Transformer(c) = tf(10, 64, 4, 1) else { unreachable!() };
    assert_eq!(c.head_dim(), 16);
    assert!(tf(10, 30, 4, 1).validate().is_err());
}

#[test]
fn lstm_forget_bias_starts_at_one() {
    let net = Network::<f64>::init(
        NetConfig::Lstm(LstmConfig {
            hidden: 3,
            layers: 1,
            window: 2,
        }),
        2,
        0,
    )
    .unwrap();
    assert_eq!(net.params.get("lstm0.b").unwrap().data(), &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
}

#[test]
fn mlp_zero_weights_return_bias() {
    let mut net = Network::<f64>::init(NetConfig::Mlp(MlpConfig { h1: 4, h2: 4 }), 3, 1).unwrap();
    for (name, t) in net.params.iter_mut() {
        for x in t.data_mut() {
            *x = 0.0;
        }
        if name == "head.b" {
            t.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..5 {
        let x = rand_window(&mut rng, 1, 3);
        assert_eq!(net.scores_one(&x).unwrap(), [0.5, -1.0, 2.0]);
    }
}

#[test]
fn mlp_matches_hand_evaluation() {
    let mut net = Network::<f64>::init(NetConfig::Mlp(MlpConfig { h1: 2, h2: 2 }), 2, 0).unwrap();
    let set = |net: &mut Network<f64>, n: &str, v: &[f64]| net.params.get_mut(n).unwrap().data_mut().copy_from_slice(v);
    set(&mut net, "l1.w", &[0.5, -0.25, 1.0, 0.75]);
    set(&mut net, "l1.b", &[0.1, -0.2]);
    set(&mut net, "l2.w", &[1.0, 2.0, -1.0, 0.5]);
    set(&mut net, "l2.b", &[0.0, 0.3]);
    set(&mut net, "head.w", &[1.0, 0.0, -1.0, 0.5, 2.0, 0.25]);
    set(&mut net, "head.b", &[0.0, 0.1, -0.1]);
    let x = [0.4, -0.6];
    // layer 1: x * W1 + b1
    let a0 = (x[0] * 0.5 + x[1] * 1.0 + 0.1_f64).tanh();
    let a1 = (x[0] * -0.25 + x[1] * 0.75 - 0.2_f64).tanh();
    let b0 = (a0 * 1.0 + a1 * -1.0 + 0.0_f64).tanh();
    let b1 = (a0 * 2.0 + a1 * 0.5 + 0.3_f64).tanh();
    let expect = [b0 * 1.0 + b1 * 0.5, b0 * 0.0 + b1 * 2.0 + 0.1, b0 * -1.0 + b1 * 0.25 - 0.1];
    let got = net.scores_one(&Tensor::vector(x.to_vec())).unwrap();
    for (g, e) in got.iter().zip(expect) {
        assert_abs_diff_eq!(*g, e, epsilon = 1e-14);
    }
}

#[test]
fn mlp_rejects_wrong_feature_count() {
    let net = Network::<f64>::init(NetConfig::Mlp(MlpConfig { h1: 2, h2: 2 }), 3, 0).unwrap();
    assert!(matches!(
        net.scores_one(&Tensor::vector(vec![1.0, 2.0])),
        Err(NetError::Input { what: "feature count", .. })
    ));
}

#[test]
fn outputs_have_three_finite_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for cfg in [
        NetConfig::Mlp(MlpConfig { h1: 32, h2: 64 }),
        NetConfig::Lstm(LstmConfig {
            hidden: 8,
            layers: 2,
            window: 6,
        }),
        tf(6, 16, 4, 2),
    ] {
        let net = Network::<f64>::init(cfg, 6, 3).unwrap();
        let obs = ObsBatch::from_windows(&[rand_window(&mut rng, 6, 6), rand_window(&mut rng, 6, 6)]).unwrap();
        let s = net.scores(&obs).unwrap();
        assert_eq!(s.shape(), &[2, N_ACTIONS]);
        assert!(s.is_finite());
    }
}

#[test]
fn sequence_models_reject_wrong_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for cfg in [
        NetConfig::Lstm(LstmConfig {
            hidden: 4,
            layers: 1,
            window: 5,
        }),
        tf(5, 8, 2, 1),
    ] {
        let net = Network::<f64>::init(cfg, 3, 0).unwrap();
        assert!(net.scores_one(&rand_window(&mut rng, 4, 3)).is_err());
        assert!(net.scores_one(&rand_window(&mut rng, 5, 2)).is_err());
        assert!(net.scores_one(&rand_window(&mut rng, 5, 3)).is_ok());
    }
}

/// Plain-loop LSTM over a constant input, used as an independent oracle.
fn lstm_oracle(net: &Network<f64>, row: &[f64], steps: usize, hidden: usize) -> Vec<Vec<f64>> {
    let w_ih = net.params.get("lstm0.w_ih").unwrap();
    let w_hh = net.params.get("lstm0.w_hh").unwrap();
    let b = net.params.get("lstm0.b").unwrap().data();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (mut h, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
    let mut states = Vec::new();
    for _ in 0..steps {
        let mut z = b.to_vec();
        for (j, zj) in z.iter_mut().enumerate() {
            for (k, x) in row.iter().enumerate() {
                *zj += x * w_ih.data()[k * 4 * hidden + j];
            }
            for (k, hv) in h.iter().enumerate() {
                *zj += hv * w_hh.data()[k * 4 * hidden + j];
            }
        }
        for u in 0..hidden {
            let (i, f, g, o) = (sig(z[u]), sig(z[hidden + u]), z[2 * hidden + u].tanh(), sig(z[3 * hidden + u]));
            c[u] = f * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
        states.push(h.clone());
    }
    states
}

#[test]
fn lstm_constant_input_converges_to_fixed_point() {
    let hidden = 4;
    let row = [0.3, -0.2, 0.5];
    let mut outs = Vec::new();
    let mut base = None;
    for w in 1..=30 {
        let cfg = NetConfig::Lstm(LstmConfig {
            hidden,
            layers: 1,
            window: w,
        });
        let mut net = Network::<f64>::init(cfg, 3, 11).unwrap();
        // same weights for every window length, shrunk to make the recurrence contractive
        let params = base.get_or_insert_with(|| {
            let mut p = net.params.clone();
            for (_, t) in p.iter_mut() {
                for x in t.data_mut() {
                    *x *= 0.5;
                }
            }
            p
        });
        net.params = params.clone();
        let window = Tensor::new(vec![w, 3], row.repeat(w)).unwrap();
        outs.push(net.scores_one(&window).unwrap());
        if w == 30 {
            let states = lstm_oracle(&net, &row, w, hidden);
            let hw = net.params.get("head.w").unwrap().data();
            let hb = net.params.get("head.b").unwrap().data();
            let last = states.last().unwrap();
            for a in 0..N_ACTIONS {
                let e: f64 = hb[a] + (0..hidden).map(|u| last[u] * hw[u * N_ACTIONS + a]).sum::<f64>();
                assert_abs_diff_eq!(outs[29][a], e, epsilon = 1e-12);
            }
            let diffs: Vec<f64> = states
                .windows(2)
                .map(|p| p[1].iter().zip(&p[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .collect();
            assert!(diffs.windows(2).all(|d| d[1] <= d[0] + 1e-15), "{diffs:?}");
        }
    }
    let step = |w: usize| (0..N_ACTIONS).map(|a| (outs[w][a] - outs[w - 1][a]).abs()).fold(0.0, f64::max);
    assert!(step(29) < 1e-6);
    assert!(step(29) <= step(5));
}

#[test]
fn saturated_forget_gate_forgets_first_row() {
    let (w, f, hidden) = (5, 3, 4);
    let cfg = NetConfig::Lstm(LstmConfig {
        hidden,
        layers: 1,
        window: w,
    });
    let mut net = Network::<f64>::init(cfg, f, 5).unwrap();
    // Cut the hidden-state path as well so the cell is the only carrier.
    for x in net.params.get_mut("lstm0.w_hh").unwrap().data_mut() {
        *x = 0.0;
    }
    for x in &mut net.params.get_mut("lstm0.b").unwrap().data_mut()[hidden..2 * hidden] {
        *x = -50.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = rand_window(&mut rng, w, f);
    let mut changed = base.clone();
    for x in &mut changed.data_mut()[..f] {
        *x += 3.0;
    }
    let (a, b) = (net.scores_one(&base).unwrap(), net.scores_one(&changed).unwrap());
    for i in 0..N_ACTIONS {
        assert!((a[i] - b[i]).abs() < 1e-9);
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Network::<f64>::init(tf(7, 16, 4, 2), 6, 9).unwrap();
    let maps = net.attention_weights(&rand_window(&mut rng, 7, 6)).unwrap();
    assert_eq!(maps.len(), 2 * 4);
    for m in maps {
        assert_eq!(m.shape(), &[7, 7]);
        for r in 0..7 {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn transformer_is_order_sensitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..5 {
        let net = Network::<f64>::init(tf(5, 8, 2, 1), 3, seed).unwrap();
        let x = rand_window(&mut rng, 5, 3);
        let mut rows: Vec<Vec<f64>> = (0..5).map(|r| x.row(r).to_vec()).collect();
        rows.swap(0, 2);
        let permuted = Tensor::from_rows(&rows).unwrap();
        let (a, b) = (net.scores_one(&x).unwrap(), net.scores_one(&permuted).unwrap());
        assert!((0..3).any(|i| (a[i] - b[i]).abs() > 1e-9));
    }
}

#[test]
fn window_of_one_composes_like_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_window(&mut rng, 1, 4);
    for cfg in [
        NetConfig::Mlp(MlpConfig { h1: 4, h2: 4 }),
        NetConfig::Lstm(LstmConfig {
            hidden: 4,
            layers: 2,
            window: 1,
        }),
        tf(1, 8, 2, 1),
    ] {
        let net = Network::<f64>::init(cfg, 4, 1).unwrap();
        assert_eq!(net.lookback(), 1);
        assert!(net.scores_one(&x).unwrap().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..3 {
        let mlp = Network::<f64>::init(NetConfig::Mlp(MlpConfig { h1: 5, h2: 4 }), 3, seed).unwrap();
        let obs = ObsBatch::from_windows(&[rand_window(&mut rng, 1, 3), rand_window(&mut rng, 1, 3)]).unwrap();
        grad_check(&mlp, &obs, seed);

        let lstm = Network::<f64>::init(
            NetConfig::Lstm(LstmConfig {
                hidden: 5,
                layers: 2,
                window: 4,
            }),
            3,
            seed,
        )
        .unwrap();
        let obs = ObsBatch::from_windows(&[rand_window(&mut rng, 4, 3), rand_window(&mut rng, 4, 3)]).unwrap();
        grad_check(&lstm, &obs, seed);

        let tfm = Network::<f64>::init(tf(4, 8, 2, 1), 3, seed).unwrap();
        grad_check(&tfm, &obs, seed);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let net = Network::<f64>::init(tf(4, 8, 2, 1), 3, 77).unwrap();
    let json = net.to_json().unwrap();
    assert!(json.contains("\"kind\":\"transformer\""));
    assert!(json.contains("\"pos_init_std\":0.5"));
    let back = Network::<f64>::from_json(&json).unwrap();
    assert_eq!(back, net);
}

#[test]
fn f32_networks_run() {
    let net = Network::<f32>::init(NetConfig::Mlp(MlpConfig { h1: 4, h2: 4 }), 2, 0).unwrap();
    let s = net.scores_one(&Tensor::vector(vec![0.1f32, 0.2])).unwrap();
    assert!(s.iter().all(|v| v.is_finite()));
}
