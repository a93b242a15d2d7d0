//! OpenAI-compatible chat-completion provider.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::provider::{Completion, Provider, ProviderError};
use super::spec::{HttpChatSpec, RequestParams};
use super::HarnessError;
use crate::corpus::Question;

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: [ChatMessage<'a>; 1],
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub fn chat_request<'a>(params: &'a RequestParams, prompt: &'a str) -> ChatRequest<'a> {
    ChatRequest {
        model: &params.model,
        messages: [ChatMessage {
            role: "user",
            content: prompt,
        }],
        temperature: params.temperature,
        max_tokens: params.max_tokens,
    }
}

pub struct HttpChatProvider {
    client: reqwest::Client,
    spec: HttpChatSpec,
    token: Option<String>,
}

impl HttpChatProvider {
    /// Resolves the bearer token up front: a named but unset variable is an
    /// error before any request goes out.
    pub fn new(spec: HttpChatSpec, timeout: Duration) -> Result<Self, HarnessError> {
        let token = match &spec.auth_env_var {
            Some(var) => match std::env::var(var) {
                Ok(value) if !value.trim().is_empty() => Some(value),
                _ => return Err(HarnessError::MissingAuth { var: var.clone() }),
            },
            None => None,
        };
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| HarnessError::Client(e.to_string()))?;
        Ok(Self {
            client,
            spec,
            token,
        })
    }
}

fn is_transient_status(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
        || status.is_server_error()
}

#[async_trait]
impl Provider for HttpChatProvider {
    async fn complete(
        &self,
        _benchmark_id: &str,
        _question: &Question,
        prompt: &str,
    ) -> Result<Completion, ProviderError> {
        let body = chat_request(&self.spec.request_params, prompt);
        let started = Instant::now();
        let mut request = self.client.post(self.spec.endpoint.clone()).json(&body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let elapsed = |started: Instant| started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);

        let response = match request.send().await {
            Ok(r) => r,
            Err(e) => {
                let message = format!("request failed: {e}");
                let latency = elapsed(started);
                return Err(if e.is_builder() {
                    ProviderError::Permanent { message, latency }
                } else {
                    ProviderError::Transient { message, latency }
                });
            }
        };
        let status = response.status();
        let payload = response.bytes().await;
        let latency = elapsed(started);
        let payload = payload.map_err(|e| ProviderError::Transient {
            message: format!("reading response body: {e}"),
            latency,
        })?;
        if !status.is_success() {
            let message = format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&payload[..payload.len().min(200)])
            );
            return Err(if is_transient_status(status) {
                ProviderError::Transient { message, latency }
            } else {
                ProviderError::Permanent { message, latency }
            });
        }
        let parsed: ChatResponse =
            serde_json::from_slice(&payload).map_err(|e| ProviderError::Permanent {
                message: format!("malformed chat response: {e}"),
                latency,
            })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Permanent {
                message: "chat response has no choices".into(),
                latency,
            })?;
        Ok(Completion {
            response: content,
            latency,
        })
    }
}
