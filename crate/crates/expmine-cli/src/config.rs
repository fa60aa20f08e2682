//! Declarative pipeline configuration: one TOML file drives every command,
//! with per-command flags winning over file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use expmine::clients::{
    ChatClientConfig, EmbedClientConfig, SearchClientConfig, TransportConfig,
};
use expmine::cluster::{ClusterConfig, SummarizeOptions};
use expmine::distill::DistillConfig;
use expmine::grpo::{GrpoConfig, RewardSpec};
use expmine::rollout::RolloutConfig;
use expmine::{Error, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PathsConfig {
    pub trajectories: Option<PathBuf>,
    pub experiences: Option<PathBuf>,
    pub hek_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub grpo_input: Option<PathBuf>,
    pub grpo_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutSection {
    /// Rollouts sampled per question.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(flatten)]
    pub config: RolloutConfig,
}

fn default_k() -> usize {
    4
}

impl Default for RolloutSection {
    fn default() -> Self {
        RolloutSection {
            k: default_k(),
            config: RolloutConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub chat: ChatClientConfig,
    #[serde(default)]
    pub embed: EmbedClientConfig,
    #[serde(default)]
    pub search: SearchClientConfig,
    #[serde(default)]
    pub client: TransportConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub summarize: SummarizeOptions,
    #[serde(default)]
    pub distill: DistillConfig,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default)]
    pub reward: RewardSpec,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Force every client into its deterministic offline flavor.
    pub fn force_mock(&mut self) {
        self.chat.mode = "mock".into();
        self.embed.mode = "mock".into();
        self.search.mode = Some("fixture".into());
    }

    /// The global seed feeds every stochastic component whose own seed was
    /// left at the default.
    pub fn resolve_seeds(&mut self) {
        if self.chat.seed == 0 {
            self.chat.seed = self.seed;
        }
        if self.embed.seed == 0 {
            self.embed.seed = self.seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.rollout.config.validate()?;
        if self.rollout.k == 0 {
            return Err(Error::Config("rollout.k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Required-path lookup with a uniform "usage error" message.
pub fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| Error::Config(format!("paths.{key} is not set (config or flag)")))
}

pub fn require_exists(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let p = require(path, key)?;
    if !p.exists() {
        return Err(Error::Config(format!(
            "paths.{key} = {} does not exist",
            p.display()
        )));
    }
    Ok(p)
}
