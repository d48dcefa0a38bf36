//! Engine configuration: one JSON document, every field defaulted, CLI
//! flags and per-request overrides layered on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::{NormalizationMode, RankMode};
use crate::rl::CriticTarget;
use crate::tasks::SplitRatios;
use crate::trajectory::ConfigSnapshot;

/// Environment variable pointing at the config file.
pub const CONFIG_ENV_VAR: &str = "GHAR_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Triple TSV source of the knowledge graph.
    pub kg_tsv: Option<PathBuf>,
    /// Where the catalog JSON export goes.
    pub catalog_json: Option<PathBuf>,
    /// Directory of per-partition index files.
    pub index_dir: Option<PathBuf>,
    /// Cohort JSON Lines file.
    pub cohort: Option<PathBuf>,
    /// Trajectory JSON Lines output.
    pub trajectories: Option<PathBuf>,
    /// Reference reasoning histories for the ranking reward.
    pub references: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentParams {
    /// Number of query rewrites (K).
    pub k: usize,
    /// Iteration cap (I).
    pub max_iterations: usize,
    pub max_meta_paths: usize,
    /// Top-N retrieval depth per partition.
    pub top_n: usize,
    /// Expected reasoning-chain length (L).
    pub expected_reason_len: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        Self {
            k: 3,
            max_iterations: 5,
            max_meta_paths: 3,
            top_n: 1,
            expected_reason_len: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub eta: f64,
    pub alpha: f64,
    pub normalization: NormalizationMode,
    pub rank_mode: RankMode,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            eta: 5.0,
            alpha: 0.1,
            // Episode batches run normalized; the unit-test default in
            // RewardConfig stays `none`.
            normalization: NormalizationMode::RunningZscore,
            rank_mode: RankMode::Literal,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RlParams {
    pub gamma: f64,
    pub lam: f64,
    pub epsilon: f64,
    pub critic_target: CriticTarget,
}

impl Default for RlParams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            epsilon: 0.2,
            critic_target: CriticTarget::RewardToGo,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskParams {
    /// Readmission window in days.
    pub kappa_days: f64,
    pub split: SplitRatios,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            kappa_days: 15.0,
            split: SplitRatios::SixTwoTwo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Mock,
    Http,
}

impl ProviderMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProviderMode::Mock => "mock",
            ProviderMode::Http => "http",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmProviderConfig {
    /// Mock script path (JSON Lines of match rules).
    pub script: Option<PathBuf>,
    /// Chat-completion endpoint for http mode.
    pub endpoint: Option<String>,
    pub model: String,
    /// Ask the provider for token log-probs.
    pub logprobs: bool,
}

impl Default for LlmProviderConfig {
    fn default() -> Self {
        Self {
            script: None,
            endpoint: None,
            model: "engine-default".into(),
            logprobs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingBackend {
    #[default]
    Mock,
    Http,
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub backend: EmbeddingBackend,
    /// Mock dimension.
    pub dim: usize,
    /// Mock hashing seed.
    pub seed: u64,
    pub endpoint: Option<String>,
    pub model: String,
    /// Precomputed-embedding JSON Lines file for the file backend.
    pub file: Option<PathBuf>,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            backend: EmbeddingBackend::Mock,
            dim: 64,
            seed: 0,
            endpoint: None,
            model: "embedding-default".into(),
            file: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    pub llm: LlmProviderConfig,
    pub embedding: EmbeddingProviderConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub seed: u64,
    /// Bound on concurrently running episodes.
    pub concurrency: usize,
    pub paths: PathsConfig,
    pub agent: AgentParams,
    pub rewards: RewardParams,
    pub rl: RlParams,
    pub tasks: TaskParams,
    pub provider: ProviderConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            concurrency: 4,
            paths: PathsConfig::default(),
            agent: AgentParams::default(),
            rewards: RewardParams::default(),
            rl: RlParams::default(),
            tasks: TaskParams::default(),
            provider: ProviderConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid(msg.to_string()))
            }
        };
        check(self.agent.k >= 1, "agent.k must be >= 1")?;
        check(
            self.agent.max_iterations >= 1,
            "agent.max_iterations must be >= 1",
        )?;
        check(self.agent.top_n >= 1, "agent.top_n must be >= 1")?;
        check(
            self.agent.expected_reason_len >= 1,
            "agent.expected_reason_len must be >= 1",
        )?;
        check(self.rewards.eta >= 0.0, "rewards.eta must be non-negative")?;
        check(
            (0.0..=1.0).contains(&self.rl.gamma),
            "rl.gamma must be in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&self.rl.lam),
            "rl.lam must be in [0, 1]",
        )?;
        check(self.rl.epsilon > 0.0, "rl.epsilon must be positive")?;
        check(
            self.tasks.kappa_days > 0.0,
            "tasks.kappa_days must be positive",
        )?;
        check(self.concurrency >= 1, "concurrency must be >= 1")?;
        check(
            self.provider.embedding.dim >= 1,
            "provider.embedding.dim must be >= 1",
        )?;
        Ok(())
    }

    /// The path-free snapshot frozen into every trajectory.
    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            seed: self.seed,
            provider_mode: self.provider.mode.as_str().to_string(),
            k: self.agent.k,
            top_n: self.agent.top_n,
            max_iterations: self.agent.max_iterations,
            max_meta_paths: self.agent.max_meta_paths,
            expected_reason_len: self.agent.expected_reason_len,
            eta: self.rewards.eta,
            alpha: self.rewards.alpha,
            normalization: self.rewards.normalization,
            rank_mode: self.rewards.rank_mode,
            gamma: self.rl.gamma,
            lam: self.rl.lam,
            epsilon: self.rl.epsilon,
            critic_target: self.rl.critic_target,
            kappa_days: self.tasks.kappa_days,
        }
    }
}

/// Per-request runtime overrides (HTTP service). Only parameters that do
/// not require rebuilding the engine are exposed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeOverrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub max_iterations: Option<usize>,
    pub max_meta_paths: Option<usize>,
    pub top_n: Option<usize>,
    pub expected_reason_len: Option<usize>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub normalization: Option<NormalizationMode>,
    pub rank_mode: Option<RankMode>,
    pub gamma: Option<f64>,
    pub lam: Option<f64>,
    pub epsilon: Option<f64>,
}

impl RuntimeOverrides {
    pub fn apply(&self, snapshot: &mut ConfigSnapshot) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    snapshot.$field = v;
                }
            };
        }
        set!(seed);
        set!(k);
        set!(max_iterations);
        set!(max_meta_paths);
        set!(top_n);
        set!(expected_reason_len);
        set!(eta);
        set!(alpha);
        set!(normalization);
        set!(rank_mode);
        set!(gamma);
        set!(lam);
        set!(epsilon);
    }
}
