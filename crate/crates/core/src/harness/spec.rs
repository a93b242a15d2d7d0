use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::HarnessError;
use crate::synthoracle::{LatencyDist, SyntheticModel};

/// A model to evaluate, loaded from a TOML file such as
///
/// ```toml
/// name = "gpt-4o"
/// provider_kind = "http_chat"
/// endpoint = "https://api.openai.com/v1/chat/completions"
/// auth_env_var = "OPENAI_API_KEY"
///
/// [request_params]
/// model = "gpt-4o-2024-05-13"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(flatten)]
    pub provider: ProviderSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    HttpChat,
    Synthetic,
    ReplayFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provider_kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    HttpChat(HttpChatSpec),
    Synthetic(SyntheticSpec),
    ReplayFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpChatSpec {
    /// Full URL of the chat-completions route.
    pub endpoint: Url,
    /// Environment variable holding the bearer token. No auth header when
    /// absent.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    pub request_params: RequestParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    /// Model identifier sent in the request body.
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub latency: LatencyDist,
    pub accuracy_by_benchmark: BTreeMap<String, f64>,
    #[serde(default)]
    pub garbage_mode: bool,
    #[serde(default)]
    pub failure_rate: f64,
}

impl ModelSpec {
    pub fn kind(&self) -> ProviderKind {
        match self.provider {
            ProviderSpec::HttpChat(_) => ProviderKind::HttpChat,
            ProviderSpec::Synthetic(_) => ProviderKind::Synthetic,
            ProviderSpec::ReplayFile { .. } => ProviderKind::ReplayFile,
        }
    }

    pub fn synthetic(model: &SyntheticModel) -> Self {
        Self {
            name: model.name.clone(),
            provider: ProviderSpec::Synthetic(SyntheticSpec {
                seed: model.seed,
                latency: model.latency,
                accuracy_by_benchmark: model.accuracy_by_benchmark.clone(),
                garbage_mode: model.garbage_mode,
                failure_rate: model.failure_rate,
            }),
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| HarnessError::InvalidSpec {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        spec.validate()
            .map_err(|message| HarnessError::InvalidSpec {
                path: origin.to_path_buf(),
                message,
            })?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("model name is empty".into());
        }
        match &self.provider {
            ProviderSpec::HttpChat(http) => {
                if !matches!(http.endpoint.scheme(), "http" | "https") {
                    return Err(format!("endpoint must be http(s), got {}", http.endpoint));
                }
                if http.request_params.model.trim().is_empty() {
                    return Err("request_params.model is empty".into());
                }
                Ok(())
            }
            ProviderSpec::Synthetic(_) => self
                .synthetic_model()
                .expect("synthetic spec")
                .validate()
                .map_err(|e| e.to_string()),
            ProviderSpec::ReplayFile { .. } => Ok(()),
        }
    }

    pub fn synthetic_model(&self) -> Option<SyntheticModel> {
        match &self.provider {
            ProviderSpec::Synthetic(s) => Some(SyntheticModel {
                name: self.name.clone(),
                accuracy_by_benchmark: s.accuracy_by_benchmark.clone(),
                latency: s.latency,
                seed: s.seed,
                garbage_mode: s.garbage_mode,
                failure_rate: s.failure_rate,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpsMode {
    /// Time each prompt on its own, one request in flight.
    #[default]
    Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Maximum in-flight requests for the accuracy pass.
    pub parallelism: usize,
    /// Retries after the first attempt on transient errors.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub request_timeout: Duration,
    pub qps_mode: QpsMode,
    /// Prompts re-issued one at a time to measure QPS when the accuracy pass
    /// ran with `parallelism > 1`. Taken in canonical record order.
    pub qps_probe: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            parallelism: 1,
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
            request_timeout: Duration::from_secs(60),
            qps_mode: QpsMode::Sequential,
            qps_probe: 50,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.initial_backoff
            .saturating_mul(factor)
            .min(self.max_backoff)
    }
}
