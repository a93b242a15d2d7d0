//! Drives a model over the corpus and records responses, scores and latency.
//!
//! The accuracy pass may keep several requests in flight. QPS is always
//! measured from requests issued strictly one at a time: with
//! `parallelism == 1` that is the accuracy pass itself; otherwise a
//! sequential probe re-issues a prefix of the prompts and only its timings
//! count.

mod http;
mod provider;
mod record;
mod spec;

use std::path::PathBuf;
use std::sync::Arc;

use chrono::Utc;
use futures::stream::{self, StreamExt};
use thiserror::Error;
use tracing::{debug, warn};

pub use http::{chat_request, ChatMessage, ChatRequest, HttpChatProvider};
pub use provider::{Completion, Provider, ProviderError, ReplayProvider, SyntheticProvider};
pub use record::{
    canonicalize, parse_status_counts, rescore, tally, EvalRecord, RunResult, RUN_FORMAT,
};
pub use spec::{
    HttpChatSpec, ModelSpec, ProviderKind, ProviderSpec, QpsMode, RequestParams, RunConfig,
    SyntheticSpec,
};

use crate::corpus::{Corpus, HierarchyConfig, Question};
use crate::prompting::{render_prompt, score_response, ParseStatus, ScoringOutcome};
use crate::synthoracle::SynthError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("environment variable `{var}` with the API token is not set")]
    MissingAuth { var: String },
    #[error("{path}: invalid model spec: {message}")]
    InvalidSpec { path: PathBuf, message: String },
    #[error("HTTP client setup failed: {0}")]
    Client(String),
    #[error(transparent)]
    Synthetic(#[from] SynthError),
    #[error("cannot measure QPS over zero records")]
    EmptyRecords,
    #[error("hierarchy leaf `{0}` is not in the corpus")]
    MissingBenchmark(String),
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    RunFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("record {benchmark}/{question} has no matching question in the corpus")]
    UnknownQuestion { benchmark: String, question: String },
}

/// `records / sum of latencies`. Latencies are summed in sorted order, so
/// the result does not depend on record order.
pub fn measure_qps(records: &[EvalRecord]) -> Result<f64, HarnessError> {
    qps_from_latencies(records.iter().map(|r| r.latency).collect())
}

fn qps_from_latencies(mut latencies: Vec<f64>) -> Result<f64, HarnessError> {
    if latencies.is_empty() {
        return Err(HarnessError::EmptyRecords);
    }
    latencies.sort_by(f64::total_cmp);
    let total: f64 = latencies.iter().sum();
    Ok(latencies.len() as f64 / total)
}

/// Build the provider a spec describes. HTTP auth is resolved here, so a
/// missing token fails before any request.
pub fn build_provider(
    spec: &ModelSpec,
    cfg: &RunConfig,
) -> Result<Arc<dyn Provider>, HarnessError> {
    Ok(match &spec.provider {
        ProviderSpec::HttpChat(http) => {
            Arc::new(HttpChatProvider::new(http.clone(), cfg.request_timeout)?)
        }
        ProviderSpec::Synthetic(_) => {
            let model = spec.synthetic_model().expect("synthetic spec");
            model.validate()?;
            Arc::new(SyntheticProvider::new(model))
        }
        ProviderSpec::ReplayFile { path } => Arc::new(ReplayProvider::new(&RunResult::read(path)?)),
    })
}

pub async fn evaluate_model(
    spec: &ModelSpec,
    corpus: &Corpus,
    hierarchy: &HierarchyConfig,
    cfg: &RunConfig,
) -> Result<RunResult, HarnessError> {
    if let Some(model) = spec.synthetic_model() {
        model.check_benchmarks(hierarchy.leaves())?;
    }
    let provider = build_provider(spec, cfg)?;
    evaluate_with(provider.as_ref(), &spec.name, corpus, hierarchy, cfg).await
}

struct Job<'a> {
    benchmark_id: &'a str,
    question: &'a Question,
    prompt: String,
}

/// Issue one prompt with retries. Never fails: an exhausted or permanent
/// error becomes a zero-scored record carrying the error message.
async fn run_job(provider: &dyn Provider, job: &Job<'_>, cfg: &RunConfig) -> EvalRecord {
    let mut attempt = 0;
    let result = loop {
        match provider
            .complete(job.benchmark_id, job.question, &job.prompt)
            .await
        {
            Ok(c) => break Ok(c),
            Err(e) if e.is_transient() && attempt < cfg.max_retries => {
                let wait = cfg.backoff(attempt);
                debug!(
                    benchmark = job.benchmark_id,
                    question = %job.question.id,
                    attempt,
                    ?wait,
                    error = e.message(),
                    "transient provider error, retrying"
                );
                tokio::time::sleep(wait).await;
                attempt += 1;
            }
            Err(e) => break Err(e),
        }
    };
    let base = EvalRecord {
        benchmark_id: job.benchmark_id.to_string(),
        question_id: job.question.id.clone(),
        prompt: job.prompt.clone(),
        response: String::new(),
        outcome: ScoringOutcome::zero(ParseStatus::Unparseable),
        latency: f64::MIN_POSITIVE,
        error: None,
    };
    match result {
        Ok(c) => EvalRecord {
            outcome: score_response(job.question, &c.response),
            response: c.response,
            latency: c.latency.max(f64::MIN_POSITIVE),
            ..base
        },
        Err(e) => {
            warn!(
                benchmark = job.benchmark_id,
                question = %job.question.id,
                error = e.message(),
                "provider failed, scoring as 0"
            );
            EvalRecord {
                latency: e.latency().max(f64::MIN_POSITIVE),
                error: Some(e.message().to_string()),
                ..base
            }
        }
    }
}

pub async fn evaluate_with(
    provider: &dyn Provider,
    model_name: &str,
    corpus: &Corpus,
    hierarchy: &HierarchyConfig,
    cfg: &RunConfig,
) -> Result<RunResult, HarnessError> {
    if cfg.parallelism == 0 {
        return Err(HarnessError::ZeroParallelism);
    }
    let mut jobs = Vec::new();
    for leaf in hierarchy.leaves() {
        let benchmark = corpus
            .get(leaf)
            .ok_or_else(|| HarnessError::MissingBenchmark(leaf.to_string()))?;
        for question in benchmark.questions() {
            jobs.push(Job {
                benchmark_id: benchmark.id(),
                question,
                prompt: render_prompt(question),
            });
        }
    }

    let started_at = Utc::now();
    let mut records: Vec<EvalRecord> = stream::iter(&jobs)
        .map(|job| run_job(provider, job, cfg))
        .buffer_unordered(cfg.parallelism)
        .collect()
        .await;
    canonicalize(&mut records);

    let qps = if cfg.parallelism == 1 {
        measure_qps(&records)?
    } else {
        let mut probe_jobs: Vec<&Job> = jobs.iter().collect();
        probe_jobs.sort_by(|a, b| {
            (a.benchmark_id, a.question.id.as_str()).cmp(&(b.benchmark_id, b.question.id.as_str()))
        });
        let mut latencies = Vec::new();
        for job in probe_jobs.into_iter().take(cfg.qps_probe.max(1)) {
            latencies.push(run_job(provider, job, cfg).await.latency);
        }
        qps_from_latencies(latencies)?
    };
    let finished_at = Utc::now();

    let warnings = records.iter().filter(|r| r.failed()).count();
    Ok(RunResult {
        model: model_name.to_string(),
        leaf_counts: tally(&records),
        records,
        qps,
        started_at,
        finished_at,
        seed: cfg.seed,
        warnings,
    })
}
