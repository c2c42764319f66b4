use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TunerError};
use crate::agents::{Algo, DdqnHyper, GrpoHyper};
use crate::nn::{LstmConfig, MlpConfig, NetConfig, TransformerConfig};

/// Sampled hyperparameters by name. Categorical and integer values are
/// stored as their numeric value.
pub type Params = BTreeMap<String, f64>;

/// Transformer width; not a tuned dimension.
pub const TRANSFORMER_MODEL_DIM: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimKind {
    LogUniform { lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Integer sampled log-uniformly on `[lo, hi]` and rounded.
    IntLog { lo: f64, hi: f64 },
    Categorical { choices: Vec<f64> },
}

impl DimKind {
    /// Continuous bounds in the internal (possibly log) coordinate.
    pub fn internal_bounds(&self) -> Option<(f64, f64)> {
        match *self {
            DimKind::LogUniform { lo, hi } | DimKind::IntLog { lo, hi } => Some((lo.ln(), hi.ln())),
            DimKind::Uniform { lo, hi } => Some((lo, hi)),
            DimKind::Categorical { .. } => None,
        }
    }

    pub fn to_internal(&self, v: f64) -> f64 {
        match self {
            DimKind::LogUniform { .. } | DimKind::IntLog { .. } => v.ln(),
            _ => v,
        }
    }

    pub fn from_internal(&self, u: f64) -> f64 {
        match *self {
            DimKind::LogUniform { lo, hi } => u.exp().clamp(lo, hi),
            DimKind::IntLog { lo, hi } => u.exp().round().clamp(lo, hi),
            DimKind::Uniform { lo, hi } => u.clamp(lo, hi),
            DimKind::Categorical { .. } => u,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        match self {
            DimKind::LogUniform { lo, hi } | DimKind::Uniform { lo, hi } => (*lo..=*hi).contains(&v),
            DimKind::IntLog { lo, hi } => (*lo..=*hi).contains(&v) && v.fract() == 0.0,
            DimKind::Categorical { choices } => choices.contains(&v),
        }
    }

    pub fn sample_uniform(&self, rng: &mut impl Rng) -> f64 {
        match self {
            DimKind::Categorical { choices } => choices[rng.random_range(0..choices.len())],
            _ => {
                let (a, b) = self.internal_bounds().expect("continuous");
                self.from_internal(rng.random_range(a..=b))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub kind: DimKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
}

fn log(name: &str, lo: f64, hi: f64) -> Dim {
    Dim {
        name: name.into(),
        kind: DimKind::LogUniform { lo, hi },
    }
}

fn uni(name: &str, lo: f64, hi: f64) -> Dim {
    Dim {
        name: name.into(),
        kind: DimKind::Uniform { lo, hi },
    }
}

fn cat(name: &str, choices: &[f64]) -> Dim {
    Dim {
        name: name.into(),
        kind: DimKind::Categorical { choices: choices.to_vec() },
    }
}

const SIZES: [f64; 3] = [32.0, 64.0, 128.0];

impl SearchSpace {
    /// The tuning table restricted to one algorithm and backbone.
    pub fn for_config(algo: Algo, net: &str) -> Result<Self> {
        let mut dims = match net {
            "mlp" => vec![cat("mlp_h1", &SIZES), cat("mlp_h2", &SIZES)],
            "lstm" => vec![
                Dim {
                    name: "window".into(),
                    kind: DimKind::IntLog { lo: 10.0, hi: 50.0 },
                },
                cat("lstm_hidden", &SIZES),
                cat("lstm_layers", &[1.0, 2.0]),
            ],
            "transformer" => vec![
                Dim {
                    name: "window".into(),
                    kind: DimKind::IntLog { lo: 10.0, hi: 50.0 },
                },
                cat("tf_layers", &[1.0, 2.0, 3.0]),
                cat("tf_heads", &[2.0, 4.0]),
                cat("tf_ff", &SIZES),
                log("tf_pos_std", 0.02, 1.0),
            ],
            other => return Err(TunerError::Config(format!("unknown backbone {other:?}"))),
        };
        dims.extend([
            log("gamma", 0.90, 0.995),
            log("grad_clip", 0.1, 4.0),
            cat("state_value_tau", &[0.0, 0.01]),
            log("lr", 2e-6, 1e-3),
            log("weight_decay", 1e-5, 1e-2),
            cat("batch_size", &[32.0, 128.0, 512.0]),
        ]);
        match algo {
            Algo::Ddqn => dims.extend([
                cat("repeat_times", &[1.0, 2.0]),
                cat("horizon_mult", &[2.0, 4.0, 8.0]),
                cat("replay_mult", &[2.0, 4.0, 8.0]),
                log("epsilon", 0.005, 0.125),
                cat("epsilon_decay", &[0.99995, 0.99999, 0.999999]),
                log("tau", 1e-3, 1e-2),
            ]),
            Algo::Grpo => dims.extend([
                cat("repeat_times", &[4.0, 8.0]),
                uni("gae_lambda", 0.9, 0.99),
                uni("clip_eps", 0.1, 0.2),
                log("kl_target", 0.005, 0.02),
                log("entropy_coef", 0.001, 0.1),
                log("vf_coef", 0.1, 1.0),
            ]),
        }
        Ok(Self { dims })
    }

    pub fn sample_uniform(&self, rng: &mut impl Rng) -> Params {
        self.dims
            .iter()
            .map(|d| (d.name.clone(), d.kind.sample_uniform(rng)))
            .collect()
    }

    pub fn contains(&self, p: &Params) -> bool {
        p.len() == self.dims.len() && self.dims.iter().all(|d| p.get(&d.name).is_some_and(|&v| d.kind.contains(v)))
    }
}

fn get(p: &Params, name: &str) -> Result<f64> {
    p.get(name)
        .copied()
        .ok_or_else(|| TunerError::Config(format!("missing parameter {name:?}")))
}

fn get_usize(p: &Params, name: &str) -> Result<usize> {
    Ok(get(p, name)?.round() as usize)
}

pub fn net_config(net: &str, p: &Params) -> Result<NetConfig> {
    Ok(match net {
        "mlp" => NetConfig::Mlp(MlpConfig {
            h1: get_usize(p, "mlp_h1")?,
            h2: get_usize(p, "mlp_h2")?,
        }),
        "lstm" => NetConfig::Lstm(LstmConfig {
            hidden: get_usize(p, "lstm_hidden")?,
            layers: get_usize(p, "lstm_layers")?,
            window: get_usize(p, "window")?,
        }),
        "transformer" => NetConfig::Transformer(TransformerConfig {
            layers: get_usize(p, "tf_layers")?,
            heads: get_usize(p, "tf_heads")?,
            model_dim: TRANSFORMER_MODEL_DIM,
            ff_dim: get_usize(p, "tf_ff")?,
            pos_init_std: get(p, "tf_pos_std")?,
            window: get_usize(p, "window")?,
        }),
        other => return Err(TunerError::Config(format!("unknown backbone {other:?}"))),
    })
}

/// `horizon_len = episode_len * horizon_mult`, capacity
/// `horizon_len * replay_mult`.
pub fn ddqn_hyper(p: &Params, episode_len: usize) -> Result<DdqnHyper> {
    let horizon_len = episode_len * get_usize(p, "horizon_mult")?;
    Ok(DdqnHyper {
        gamma: get(p, "gamma")?,
        epsilon_start: get(p, "epsilon")?,
        epsilon_decay: get(p, "epsilon_decay")?,
        tau: get(p, "tau")?,
        batch_size: get_usize(p, "batch_size")?,
        replay_capacity: horizon_len * get_usize(p, "replay_mult")?,
        horizon_len,
        repeat_times: get_usize(p, "repeat_times")?,
        lr: get(p, "lr")?,
        weight_decay: get(p, "weight_decay")?,
        grad_clip: get(p, "grad_clip")?,
        state_value_tau: get(p, "state_value_tau")?,
    })
}

pub fn grpo_hyper(p: &Params) -> Result<GrpoHyper> {
    Ok(GrpoHyper {
        clip_eps: get(p, "clip_eps")?,
        entropy_coef: get(p, "entropy_coef")?,
        kl_target: get(p, "kl_target")?,
        repeat_times: get_usize(p, "repeat_times")?,
        batch_size: get_usize(p, "batch_size")?,
        lr: get(p, "lr")?,
        weight_decay: get(p, "weight_decay")?,
        grad_clip: get(p, "grad_clip")?,
        gamma: get(p, "gamma")?,
        gae_lambda: get(p, "gae_lambda")?,
        vf_coef: get(p, "vf_coef")?,
        state_value_tau: get(p, "state_value_tau")?,
        ..GrpoHyper::default()
    })
}
