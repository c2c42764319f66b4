//! MLP, LSTM and Transformer-encoder backbones, each ending in a linear
//! head with one score per action.
//!
//! All three read a batch of observation windows (`batch x window x
//! features`). The MLP looks only at the last row of each window; the
//! sequence models read the whole window and hand their last-timestep
//! output to the head.

mod init;
mod lstm;
mod mlp;
mod transformer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Bound, ParamSet, Scalar, Tape, Tensor, TensorError, Var};

pub use init::{normal, xavier_uniform};

/// Short, long, hold.
pub const N_ACTIONS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input {what} mismatch: expected {expected}, got {got}")]
    Input {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub h1: usize,
    pub h2: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub window: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub pos_init_std: f64,
    pub window: usize,
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetConfig {
    Mlp(MlpConfig),
    Lstm(LstmConfig),
    Transformer(TransformerConfig),
}

impl NetConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            NetConfig::Mlp(_) => "mlp",
            NetConfig::Lstm(_) => "lstm",
            NetConfig::Transformer(_) => "transformer",
        }
    }

    /// Rows of history each observation must carry.
    pub fn lookback(&self) -> usize {
        match self {
            NetConfig::Mlp(_) => 1,
            NetConfig::Lstm(c) => c.window,
            NetConfig::Transformer(c) => c.window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::Config(m));
        match self {
            NetConfig::Mlp(c) if c.h1 == 0 || c.h2 == 0 => bad(format!("mlp widths must be positive: {c:?}")),
            NetConfig::Lstm(c) if c.hidden == 0 || c.layers == 0 || c.window == 0 => {
                bad(format!("lstm sizes must be positive: {c:?}"))
            }
            NetConfig::Transformer(c) => {
                if c.layers == 0 || c.heads == 0 || c.model_dim == 0 || c.ff_dim == 0 || c.window == 0 {
                    bad(format!("transformer sizes must be positive: {c:?}"))
                } else if c.model_dim % c.heads != 0 {
                    bad(format!("model_dim {} not divisible by {} heads", c.model_dim, c.heads))
                } else if !(c.pos_init_std > 0.0 && c.pos_init_std.is_finite()) {
                    bad(format!("pos_init_std must be positive, got {}", c.pos_init_std))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Observation windows laid out as `(batch, window, features)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch<T> {
    pub batch: usize,
    pub window: usize,
    pub features: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ObsBatch<T> {
    pub fn new(batch: usize, window: usize, features: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * window * features {
            return Err(NetError::Input {
                what: "observation length",
                expected: batch * window * features,
                got: data.len(),
            });
        }
        Ok(Self {
            batch,
            window,
            features,
            data,
        })
    }

    /// Stacks `window x features` matrices into one batch.
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<Self> {
        let mut data = Vec::new();
        let mut dims = None;
        let mut batch = 0;
        for w in windows {
            let (r, c) = match w.shape() {
                [r, c] => (*r, *c),
                [c] => (1, *c),
                s => {
                    return Err(NetError::Config(format!("observation must be a matrix, got {s:?}")));
                }
            };
            match dims {
                None => dims = Some((r, c)),
                Some((r0, c0)) if (r0, c0) != (r, c) => {
                    return Err(NetError::Input {
                        what: "window shape",
                        expected: r0 * c0,
                        got: r * c,
                    })
                }
                _ => {}
            }
            data.extend_from_slice(w.data());
            batch += 1;
        }
        let (window, features) = dims.unwrap_or((0, 0));
        Self::new(batch, window, features, data)
    }

    pub fn row(&self, b: usize, t: usize) -> &[T] {
        let start = (b * self.window + t) * self.features;
        &self.data[start..start + self.features]
    }

    /// `batch x features` matrix of timestep `t` across the batch.
    pub fn timestep(&self, t: usize) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.batch * self.features);
        for b in 0..self.batch {
            data.extend_from_slice(self.row(b, t));
        }
        Tensor::new(vec![self.batch, self.features], data).expect("timestep shape")
    }

    /// All rows stacked: `(batch * window) x features`.
    pub fn flat(&self) -> Tensor<T> {
        Tensor::new(vec![self.batch * self.window, self.features], self.data.clone()).expect("flat shape")
    }
}

/// A parameterized scorer: observation windows in, `batch x 3` scores out.
pub trait Model<T: Scalar>: Clone + Send + Sync {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn lookback(&self) -> usize;
    fn n_features(&self) -> usize;
    fn forward(&self, tape: &mut Tape<T>, params: &Bound, obs: &ObsBatch<T>) -> Result<Var>;

    /// Forward pass without gradient tracking.
    fn scores(&self, obs: &ObsBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params().bind(&mut tape, false)?;
        let out = self.forward(&mut tape, &bound, obs)?;
        Ok(tape.value(out).clone())
    }
}

/// One of the three backbones with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Network<T> {
    pub config: NetConfig,
    pub n_features: usize,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Network<T> {
    /// Deterministic initialization from `seed`.
    pub fn init(config: NetConfig, n_features: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_features == 0 {
            return Err(NetError::Config("feature count must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match &config {
            NetConfig::Mlp(c) => mlp::init(c, n_features, &mut rng),
            NetConfig::Lstm(c) => lstm::init(c, n_features, &mut rng),
            NetConfig::Transformer(c) => transformer::init(c, n_features, &mut rng),
        };
        Ok(Self {
            config,
            n_features,
            params,
        })
    }

    /// Scores for a single `window x features` matrix (a plain feature
    /// vector is accepted as a one-row window).
    pub fn scores_one(&self, window: &Tensor<T>) -> Result<[T; N_ACTIONS]> {
        let obs = ObsBatch::from_windows([window])?;
        let out = self.scores(&obs)?;
        let d = out.data();
        Ok([d[0], d[1], d[2]])
    }

    /// Softmax attention matrices (`window x window`) of every layer and
    /// head for one window. Empty for non-transformer backbones.
    pub fn attention_weights(&self, window: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let NetConfig::Transformer(c) = &self.config else {
            return Ok(Vec::new());
        };
        let obs = ObsBatch::from_windows([window])?;
        self.check_obs(&obs)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false)?;
        let mut maps = Vec::new();
        transformer::forward(c, &mut tape, &bound, &obs, Some(&mut maps))?;
        Ok(maps.into_iter().map(|v| tape.value(v).clone()).collect())
    }

    fn check_obs(&self, obs: &ObsBatch<T>) -> Result<()> {
        if obs.features != self.n_features {
            return Err(NetError::Input {
                what: "feature count",
                expected: self.n_features,
                got: obs.features,
            });
        }
        match self.config {
            NetConfig::Mlp(_) if obs.window == 0 => Err(NetError::Input {
                what: "window length",
                expected: 1,
                got: 0,
            }),
            NetConfig::Mlp(_) => Ok(()),
            _ if obs.window != self.config.lookback() => Err(NetError::Input {
                what: "window length",
                expected: self.config.lookback(),
                got: obs.window,
            }),
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(s).map_err(|e| NetError::Config(e.to_string()))?;
        net.config.validate()?;
        Ok(net)
    }
}

impl<T: Scalar> Model<T> for Network<T> {
    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn lookback(&self) -> usize {
        self.config.lookback()
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn forward(&self, tape: &mut Tape<T>, params: &Bound, obs: &ObsBatch<T>) -> Result<Var> {
        self.check_obs(obs)?;
        match &self.config {
            NetConfig::Mlp(_) => mlp::forward(tape, params, obs),
            NetConfig::Lstm(c) => lstm::forward(c, tape, params, obs),
            NetConfig::Transformer(c) => transformer::forward(c, tape, params, obs, None),
        }
    }
}

/// `x * w + b` with `b` broadcast over rows.
pub(crate) fn affine<T: Scalar>(tape: &mut Tape<T>, p: &Bound, x: Var, w: &str, b: &str) -> Result<Var> {
    let h = tape.matmul(x, p.get(w)?)?;
    Ok(tape.add(h, p.get(b)?)?)
}

#[cfg(test)]
mod tests;
