use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{argmax, Algo};
use crate::data::FeatureMode;
use crate::nn::{Model, Network, ObsBatch};
use crate::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error(transparent)]
    Net(#[from] crate::nn::NetError),
}

/// Everything needed to rebuild an agent's greedy policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub algo: Algo,
    pub network: Network<f64>,
    pub hyper: serde_json::Value,
    pub feature_mode: FeatureMode,
    pub no_llm: bool,
    pub seed: u64,
}

impl AgentCheckpoint {
    pub fn lookback(&self) -> usize {
        self.network.lookback()
    }

    /// Argmax of Q-values (DDQN) or logits (GRPO).
    pub fn greedy_action(&self, obs: &Tensor) -> Result<usize, crate::nn::NetError> {
        let s = self.network.scores(&ObsBatch::from_windows([obs])?)?;
        Ok(argmax(s.data()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
        std::fs::write(path, self.to_json()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ck: Self = serde_json::from_str(&text).map_err(|source| CheckpointError::Json {
            path: path.display().to_string(),
            source,
        })?;
        ck.network.config.validate()?;
        Ok(ck)
    }
}
