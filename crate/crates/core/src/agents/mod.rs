//! DDQN and critic-free GRPO over any [`Model`] backbone, plus the episode
//! loops that train them on a [`TradingEnv`].

mod checkpoint;
mod ddqn;
mod grpo;
mod replay;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvError;
use crate::nn::{Model, NetError, ObsBatch, N_ACTIONS};
use crate::tensor::TensorError;
use crate::Tensor;

pub use checkpoint::{AgentCheckpoint, CheckpointError};
pub use ddqn::{ddqn_act, ddqn_targets, soft_update, Ddqn, DdqnHyper};
pub use grpo::{grpo_advantages, grpo_collect, grpo_update, surrogate, Grpo, GrpoHyper, GroupRollout, Trajectory, UpdateStats};
pub use replay::{ReplayBuffer, Transition};
pub use train::{run_greedy_episode, train_ddqn, train_grpo, EpisodeSource, EvalHook, TrainCtx, TrainSummary};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite loss {0}")]
    NonFinite(f64),
    #[error("invalid hyperparameter: {0}")]
    Hyper(String),
}

pub type Result<T, E = AgentError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ddqn,
    Grpo,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Ddqn => "ddqn",
            Algo::Grpo => "grpo",
        }
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Greedy action for one observation window.
pub fn greedy_action<M: Model<f64>>(model: &M, obs: &Tensor) -> Result<usize> {
    let q = model.scores(&ObsBatch::from_windows([obs])?)?;
    Ok(argmax(q.data()))
}

/// Softmax probabilities of one score row.
pub fn softmax(scores: &[f64]) -> [f64; N_ACTIONS] {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_ACTIONS];
    let mut z = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
    out
}

/// Draws an index from `probs` by inversion.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}


/// Lookup-table scorer for one-hot observations: `scores = onehot * q`.
/// Handy for tabular checks of the learners.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularQ {
    params: crate::ParamSet,
    states: usize,
}

impl TabularQ {
    pub fn new(states: usize, init: f64) -> Self {
        let mut params = crate::ParamSet::new();
        params.insert("q", Tensor::full(&[states, N_ACTIONS], init));
        Self { params, states }
    }

    pub fn table(&self) -> &Tensor {
        self.params.get("q").expect("q exists")
    }

    pub fn one_hot(&self, s: usize) -> Tensor {
        let mut v = vec![0.0; self.states];
        v[s] = 1.0;
        Tensor::new(vec![1, self.states], v).expect("one-hot shape")
    }
}

impl Model<f64> for TabularQ {
    fn params(&self) -> &crate::ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut crate::ParamSet {
        &mut self.params
    }

    fn lookback(&self) -> usize {
        1
    }

    fn n_features(&self) -> usize {
        self.states
    }

    fn forward(
        &self,
        tape: &mut crate::tensor::Tape<f64>,
        params: &crate::tensor::Bound,
        obs: &ObsBatch<f64>,
    ) -> std::result::Result<crate::tensor::Var, NetError> {
        let x = tape.constant(obs.timestep(obs.window - 1))?;
        Ok(tape.matmul(x, params.get("q")?)?)
    }
}
