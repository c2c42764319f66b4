use std::path::{Path, PathBuf};

use newsrl::data::{FeatureMode, DEFAULT_BOUNDARIES};
use newsrl::env::{EnvConfig, DEFAULT_SLTP};
use newsrl::eval::DEFAULT_EVAL_SEED;
use newsrl::pipeline::EvalSettings;
use newsrl::sentiment::{ScoreConfig, DEFAULT_ASSET, DEFAULT_CHAR_BUDGET};
use newsrl::tuner::Budget;
use serde::{Deserialize, Serialize};

/// Settings shared by every subcommand. Loaded from TOML; command-line
/// flags override individual keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub features: FeaturesConfig,
    pub env: EnvSection,
    pub tuner: TunerConfig,
    pub eval: EvalConfig,
    pub endpoint: EndpointConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root for every artifact the tool writes.
    pub work_dir: PathBuf,
    /// Raw inputs read by `ingest-bars` and `ingest-news`.
    pub bars: Option<PathBuf>,
    pub news: Option<PathBuf>,
    /// Recorded responses used by `score-news --offline`; the bundled
    /// fixture responses when unset.
    pub fixture: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("newsrl-out"),
            bars: None,
            news: None,
            fixture: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    pub mode: FeatureMode,
    /// Train and validation end fractions.
    pub boundaries: [f64; 2],
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            mode: FeatureMode::Returns,
            boundaries: [DEFAULT_BOUNDARIES.0, DEFAULT_BOUNDARIES.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Stop-loss / take-profit distance as a fraction of entry; 0 disables.
    pub sltp: f64,
    pub fee_bps: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            sltp: DEFAULT_SLTP,
            fee_bps: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub algo: String,
    pub net: String,
    pub no_llm: bool,
    pub trials: usize,
    pub seed: u64,
    pub desk_scale: bool,
    pub normalize_rewards: bool,
    /// Overrides applied on top of the full or desk-scale budget.
    pub train_steps: Option<u64>,
    pub episode_len: Option<usize>,
    pub eval_interval: Option<u64>,
    pub n_eval: Option<usize>,
    pub eval_len: Option<usize>,
}

impl Default for TunerConfig {
    fn default() -> Self {
        Self {
            algo: "ddqn".into(),
            net: "mlp".into(),
            no_llm: false,
            trials: 5,
            seed: 1,
            desk_scale: false,
            normalize_rewards: true,
            train_steps: None,
            episode_len: None,
            eval_interval: None,
            n_eval: None,
            eval_len: None,
        }
    }
}

/// Test-split protocol. Unset counts follow the tuner budget's validation
/// protocol (256 x 3000 at full scale).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub periods: Option<usize>,
    pub length: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            periods: None,
            length: None,
            seed: DEFAULT_EVAL_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// OpenAI-compatible chat completions base URL.
    pub base_url: String,
    pub model: String,
    pub timeout_secs: u64,
    pub char_budget: usize,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub asset: String,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        let d = ScoreConfig::default();
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            timeout_secs: 60,
            char_budget: DEFAULT_CHAR_BUDGET,
            max_in_flight: d.max_in_flight,
            max_retries: d.max_retries,
            backoff_ms: d.backoff.as_millis() as u64,
            asset: DEFAULT_ASSET.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let [a, b] = self.features.boundaries;
        if !(0.0 < a && a < b && b < 1.0) {
            return bad(format!("features.boundaries must satisfy 0 < a < b < 1, got [{a}, {b}]"));
        }
        if !matches!(self.tuner.algo.as_str(), "ddqn" | "grpo") {
            return bad(format!("tuner.algo must be ddqn or grpo, got {:?}", self.tuner.algo));
        }
        if !matches!(self.tuner.net.as_str(), "mlp" | "lstm" | "transformer") {
            return bad(format!("tuner.net must be mlp, lstm or transformer, got {:?}", self.tuner.net));
        }
        if self.tuner.trials == 0 {
            return bad("tuner.trials must be at least 1".into());
        }
        self.env_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.budget().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let e = self.eval_settings();
        if e.periods == 0 || e.length < 2 {
            return bad("eval.periods must be positive and eval.length at least 2".into());
        }
        if self.endpoint.char_budget == 0 || self.endpoint.max_in_flight == 0 {
            return bad("endpoint.char_budget and endpoint.max_in_flight must be positive".into());
        }
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            sltp: (self.env.sltp != 0.0).then_some(self.env.sltp),
            fee_bps: self.env.fee_bps,
            ..EnvConfig::default()
        }
    }

    pub fn budget(&self) -> Budget {
        let t = &self.tuner;
        let base = if t.desk_scale { Budget::desk() } else { Budget::full() };
        Budget {
            train_steps: t.train_steps.unwrap_or(base.train_steps),
            episode_len: t.episode_len.unwrap_or(base.episode_len),
            eval_interval: t.eval_interval.unwrap_or(base.eval_interval),
            n_eval: t.n_eval.unwrap_or(base.n_eval),
            eval_len: t.eval_len.unwrap_or(base.eval_len),
            eval_seed: base.eval_seed,
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        let b = self.budget();
        EvalSettings {
            env: self.env_config(),
            periods: self.eval.periods.unwrap_or(b.n_eval),
            length: self.eval.length.unwrap_or(b.eval_len),
            seed: self.eval.seed,
        }
    }

    pub fn score_config(&self) -> ScoreConfig {
        let e = &self.endpoint;
        ScoreConfig {
            char_budget: e.char_budget,
            max_in_flight: e.max_in_flight,
            max_retries: e.max_retries,
            backoff: std::time::Duration::from_millis(e.backoff_ms),
            asset: e.asset.clone(),
        }
    }

    pub fn boundaries(&self) -> (f64, f64) {
        (self.features.boundaries[0], self.features.boundaries[1])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
