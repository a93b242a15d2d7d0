use std::collections::HashMap;

use async_trait::async_trait;

use super::record::RunResult;
use crate::corpus::Question;
use crate::synthoracle::SyntheticModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub response: String,
    /// Seconds from request send to response complete.
    pub latency: f64,
}

/// A failed request. `latency` is the time the failed attempt took.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderError {
    /// Worth retrying: rate limits, server errors, timeouts, dropped
    /// connections.
    Transient {
        message: String,
        latency: f64,
    },
    Permanent {
        message: String,
        latency: f64,
    },
}

impl ProviderError {
    pub fn message(&self) -> &str {
        match self {
            ProviderError::Transient { message, .. } | ProviderError::Permanent { message, .. } => {
                message
            }
        }
    }

    pub fn latency(&self) -> f64 {
        match self {
            ProviderError::Transient { latency, .. } | ProviderError::Permanent { latency, .. } => {
                *latency
            }
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transient { .. })
    }
}

#[async_trait]
pub trait Provider: Send + Sync {
    async fn complete(
        &self,
        benchmark_id: &str,
        question: &Question,
        prompt: &str,
    ) -> Result<Completion, ProviderError>;
}

/// Answers from a [`SyntheticModel`] on a synthetic clock: latencies are
/// drawn, not slept.
pub struct SyntheticProvider {
    model: SyntheticModel,
}

impl SyntheticProvider {
    pub fn new(model: SyntheticModel) -> Self {
        Self { model }
    }
}

#[async_trait]
impl Provider for SyntheticProvider {
    async fn complete(
        &self,
        benchmark_id: &str,
        question: &Question,
        _prompt: &str,
    ) -> Result<Completion, ProviderError> {
        let answer = self
            .model
            .synth_answer(benchmark_id, question)
            .map_err(|e| ProviderError::Permanent {
                message: e.to_string(),
                latency: self.model.latency.mean,
            })?;
        if self.model.fails_on(benchmark_id, &question.id) {
            return Err(ProviderError::Permanent {
                message: "synthetic provider failure".into(),
                latency: answer.latency,
            });
        }
        Ok(Completion {
            response: answer.response,
            latency: answer.latency,
        })
    }
}

/// Replays the responses and latencies of a persisted run.
pub struct ReplayProvider {
    entries: HashMap<(String, String), Result<Completion, ProviderError>>,
}

impl ReplayProvider {
    pub fn new(run: &RunResult) -> Self {
        let entries = run
            .records
            .iter()
            .map(|r| {
                let key = (r.benchmark_id.clone(), r.question_id.clone());
                let value = match &r.error {
                    None => Ok(Completion {
                        response: r.response.clone(),
                        latency: r.latency,
                    }),
                    Some(message) => Err(ProviderError::Permanent {
                        message: message.clone(),
                        latency: r.latency,
                    }),
                };
                (key, value)
            })
            .collect();
        Self { entries }
    }
}

#[async_trait]
impl Provider for ReplayProvider {
    async fn complete(
        &self,
        benchmark_id: &str,
        question: &Question,
        _prompt: &str,
    ) -> Result<Completion, ProviderError> {
        self.entries
            .get(&(benchmark_id.to_string(), question.id.clone()))
            .cloned()
            .unwrap_or_else(|| {
                Err(ProviderError::Permanent {
                    message: format!("no recorded response for {benchmark_id}/{}", question.id),
                    latency: f64::MIN_POSITIVE,
                })
            })
    }
}
