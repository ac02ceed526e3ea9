//! Operator settings: pipeline tunables, provider profiles and the embedder,
//! read from one TOML file.
//!
//! ```toml
//! [pipeline]
//! parallelism = 8
//!
//! [providers.gpt4]
//! endpoint = "https://api.openai.com/v1"
//! model = "gpt-4"
//! api_key_env = "OPENAI_API_KEY"
//! context_window_tokens = 8192
//! column_group_size = 40
//!
//! [embedding]
//! kind = "stub"
//! dim = 256
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{PipelineConfig, Validate};
use crate::llm::{Gateway, HttpEndpoint, HttpProvider, LlmProvider, ProviderProfile, ScriptedProvider, SyntheticProvider};
use crate::vector::{Embedder, HttpEmbedder, StubEmbedder};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("invalid provider `{0}`; expected synthetic, scripted:<file> or http:<profile>")]
    ProviderSpec(String),
    #[error("no provider profile named `{0}` in the config file")]
    UnknownProfile(String),
    #[error("{0}")]
    Invalid(String),
}

/// Which backend the gateway talks to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderSpec {
    Synthetic,
    Scripted(PathBuf),
    Http(String),
}

impl ProviderSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let text = text.trim();
        if text == "synthetic" {
            return Ok(Self::Synthetic);
        }
        if let Some(path) = text.strip_prefix("scripted:").filter(|p| !p.is_empty()) {
            return Ok(Self::Scripted(PathBuf::from(path)));
        }
        if let Some(name) = text.strip_prefix("http:").filter(|p| !p.is_empty()) {
            return Ok(Self::Http(name.to_string()));
        }
        Err(ConfigError::ProviderSpec(text.to_string()))
    }
}

impl std::fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Synthetic => write!(f, "synthetic"),
            Self::Scripted(p) => write!(f, "scripted:{}", p.display()),
            Self::Http(n) => write!(f, "http:{n}"),
        }
    }
}

fn default_window() -> usize {
    8192
}

fn default_group() -> usize {
    40
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ProviderSettings {
    #[serde(flatten)]
    pub endpoint: HttpEndpoint,
    #[serde(default = "default_window")]
    pub context_window_tokens: usize,
    #[serde(default = "default_group")]
    pub column_group_size: usize,
    #[serde(default)]
    pub price_per_1m_input: f64,
    #[serde(default)]
    pub price_per_1m_output: f64,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSettings {
    Stub {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Http {
        #[serde(flatten)]
        endpoint: HttpEndpoint,
        dim: usize,
    },
}

fn default_dim() -> usize {
    256
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self::Stub { dim: default_dim() }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq, Default)]
#[serde(default)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub providers: BTreeMap<String, ProviderSettings>,
    pub embedding: EmbeddingSettings,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let s: Settings = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let report = s.pipeline.validate();
        if !report.is_valid() {
            let problems: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            return Err(ConfigError::Invalid(format!("pipeline: {}", problems.join("; "))));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file_err = |message: String| ConfigError::File {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        Self::from_toml(&text).map_err(|e| file_err(e.to_string()))
    }

    /// The configured file, or defaults when none is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    pub fn profile(&self, spec: &ProviderSpec) -> Result<ProviderProfile, ConfigError> {
        match spec {
            ProviderSpec::Http(name) => {
                let p = self.providers.get(name).ok_or_else(|| ConfigError::UnknownProfile(name.clone()))?;
                let profile = ProviderProfile {
                    name: name.clone(),
                    context_window_tokens: p.context_window_tokens,
                    column_group_size: p.column_group_size,
                    price_per_1m_input: p.price_per_1m_input,
                    price_per_1m_output: p.price_per_1m_output,
                };
                profile.check().map_err(ConfigError::Invalid)?;
                Ok(profile)
            }
            other => Ok(ProviderProfile::unbounded(&other.to_string())),
        }
    }

    pub fn gateway(&self, spec: &ProviderSpec) -> Result<Gateway, ConfigError> {
        let profile = self.profile(spec)?;
        let provider: Arc<dyn LlmProvider> = match spec {
            ProviderSpec::Synthetic => Arc::new(SyntheticProvider::new()),
            ProviderSpec::Scripted(path) => Arc::new(ScriptedProvider::from_file(path).map_err(ConfigError::Invalid)?),
            ProviderSpec::Http(name) => {
                let p = &self.providers[name];
                Arc::new(HttpProvider::new(name, p.endpoint.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        };
        Ok(Gateway::new(provider, profile))
    }

    pub fn embedder(&self) -> Result<Arc<dyn Embedder>, ConfigError> {
        match &self.embedding {
            EmbeddingSettings::Stub { dim } if *dim > 0 => Ok(Arc::new(StubEmbedder::bag_of_words(*dim))),
            EmbeddingSettings::Stub { .. } => Err(ConfigError::Invalid("embedding dim must be positive".into())),
            EmbeddingSettings::Http { endpoint, dim } => Ok(Arc::new(
                HttpEmbedder::new(endpoint.clone(), *dim).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            )),
        }
    }
}
