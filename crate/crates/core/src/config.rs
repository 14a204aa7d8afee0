//! Runtime configuration, loadable from TOML. Every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub encoder: EncoderConfig,
    pub context: ContextConfig,
    pub routing: RoutingConfig,
    pub llm: LlmConfig,
    pub trainer: TrainerConfig,
    pub portal: PortalSettings,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)?;
        Ok(Self::from_toml_str(&raw)?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Hash,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    pub hash_seed: u64,
    /// Base URL of an OpenAI-compatible embeddings endpoint (`kind = "external"`).
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Hash,
            dim: 256,
            hash_seed: 0,
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    pub tau_seconds: f64,
    pub window_seconds: f64,
    /// Scale applied to the app-recency block when assembling features.
    pub app_weight: f64,
    /// Scale applied to the time block when assembling features.
    pub time_weight: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            tau_seconds: 300.0,
            window_seconds: 600.0,
            app_weight: 0.2,
            time_weight: 0.2,
        }
    }
}

impl ContextConfig {
    /// Context blocks zeroed out; only text contributes to similarity.
    pub fn text_only(&self) -> Self {
        Self {
            app_weight: 0.0,
            time_weight: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Local integrator when confident, LLM otherwise.
    Cascade,
    /// Integrator only; the LLM is never queried.
    LocalOnly,
    /// Every query goes to the LLM.
    LlmOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FewShotSelection {
    Nearest,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingConfig {
    pub k: usize,
    pub threshold: f64,
    pub user_weight: f64,
    pub few_shot_m: usize,
    pub mode: RoutingMode,
    pub few_shot: FewShotSelection,
    /// One store shared by every user, with no same-user boost.
    pub shared_store: bool,
    pub bootstrap: bool,
    pub bootstrap_alpha: usize,
    pub seed: u64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        Self {
            k: 5,
            threshold: 0.95,
            user_weight: 1.05,
            few_shot_m: 20,
            mode: RoutingMode::Cascade,
            few_shot: FewShotSelection::Nearest,
            shared_store: false,
            bootstrap: true,
            bootstrap_alpha: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub enabled: bool,
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_concurrent: usize,
    /// Total chat-history messages allowed in a contact-selection prompt.
    pub history_budget: usize,
    pub audit_log: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_ms: 8_000,
            max_concurrent: 4,
            history_budget: 200,
            audit_log: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub tol: f64,
    /// Local hour of day (UTC) at which the daily retrain runs in the server.
    pub retrain_hour: u32,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            max_epochs: 200,
            tol: 1e-6,
            retrain_hour: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PortalSettings {
    pub bind: String,
    pub auto_provision: bool,
    pub data_dir: Option<PathBuf>,
    pub telemetry_log: Option<PathBuf>,
    /// JSONL file of records used to bootstrap new users.
    pub global_pool: Option<PathBuf>,
    pub telemetry_capacity: usize,
}

impl Default for PortalSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            auto_provision: true,
            data_dir: None,
            telemetry_log: None,
            global_pool: None,
            telemetry_capacity: 10_000,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = Config::from_toml_str(
            r#"
            [encoder]
            dim = 64
            [routing]
            threshold = 0.97
            mode = "llm_only"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.encoder.dim, 64);
        assert_eq!(cfg.encoder.kind, EncoderKind::Hash);
        assert_eq!(cfg.routing.threshold, 0.97);
        assert_eq!(cfg.routing.mode, RoutingMode::LlmOnly);
        assert_eq!(cfg.routing.k, 5);
        assert_eq!(cfg.context.tau_seconds, 300.0);
        assert_eq!(cfg.llm.timeout_ms, 8_000);
    }
}
