//! Hyperparameter search with validation-guided early stopping.

mod space;
mod store;
mod tpe;
mod trial;

pub use space::{ddqn_hyper, grpo_hyper, net_config, Dim, DimKind, Params, SearchSpace, TRANSFORMER_MODEL_DIM};
pub use store::{rank_trials, TrialRecord, TrialStatus, TrialStore};
pub use tpe::{scored, split_densities, suggest, Parzen, GOOD_FRACTION, N_CANDIDATES, N_STARTUP};
pub use trial::{check_early_stop, run_trial, trial_seed, tune, Budget, TrialCtx, TrialOutcome, PATIENCE};

#[derive(Debug, thiserror::Error)]
pub enum TunerError {
    #[error("invalid tuner configuration: {0}")]
    Config(String),
    #[error("need at least {need} finished trials, have {have}")]
    NotEnoughTrials { need: usize, have: usize },
    #[error("trial {0} is already recorded")]
    DuplicateTrial(usize),
    #[error("{path}:{line}: {msg}")]
    Store { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Checkpoint(#[from] crate::agents::CheckpointError),
}

pub type Result<T, E = TunerError> = std::result::Result<T, E>;
