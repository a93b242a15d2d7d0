//! Evaluation records and the persisted run file.
//!
//! A run file is line-delimited JSON: one header object, then one
//! [`EvalRecord`] per line in canonical `(benchmark_id, question_id)` order.
//! Floats are written in shortest round-trip form, so reading a run back
//! yields bit-identical values.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::aggregator::LeafCounts;
use crate::corpus::Corpus;
use crate::prompting::{score_response, ParseStatus, ScoringOutcome};

pub const RUN_FORMAT: &str = "mpg-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub benchmark_id: String,
    pub question_id: String,
    pub prompt: String,
    pub response: String,
    pub outcome: ScoringOutcome,
    /// Wall-clock seconds, request send to response complete.
    pub latency: f64,
    /// Provider error after retries were exhausted. The record then carries
    /// an empty response scored 0 / unparseable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub model: String,
    pub records: Vec<EvalRecord>,
    pub leaf_counts: BTreeMap<String, LeafCounts>,
    pub qps: f64,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub seed: u64,
    /// Questions on which the provider failed permanently.
    pub warnings: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunHeader {
    format: String,
    model: String,
    seed: u64,
    qps: f64,
    warnings: usize,
    started_at: DateTime<Utc>,
    finished_at: DateTime<Utc>,
    record_count: usize,
    leaf_counts: BTreeMap<String, LeafCounts>,
}

/// Per-benchmark success counts from record outcomes.
pub fn tally(records: &[EvalRecord]) -> BTreeMap<String, LeafCounts> {
    let mut acc: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.benchmark_id.clone()).or_default();
        e.0 += u64::from(r.outcome.score());
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(id, (s, n))| (id, LeafCounts::new(s, n).expect("s <= n and n >= 1")))
        .collect()
}

/// Per-benchmark counts of each parse status.
pub fn parse_status_counts(
    records: &[EvalRecord],
) -> BTreeMap<String, BTreeMap<ParseStatus, usize>> {
    let mut acc: BTreeMap<String, BTreeMap<ParseStatus, usize>> = BTreeMap::new();
    for r in records {
        *acc.entry(r.benchmark_id.clone())
            .or_default()
            .entry(r.outcome.parse_status())
            .or_default() += 1;
    }
    acc
}

/// Score the stored responses again against `corpus`.
pub fn rescore(
    run: &RunResult,
    corpus: &Corpus,
) -> Result<BTreeMap<String, LeafCounts>, HarnessError> {
    let records = run
        .records
        .iter()
        .map(|r| {
            let question = corpus
                .get(&r.benchmark_id)
                .and_then(|b| b.questions().iter().find(|q| q.id == r.question_id))
                .ok_or_else(|| HarnessError::UnknownQuestion {
                    benchmark: r.benchmark_id.clone(),
                    question: r.question_id.clone(),
                })?;
            let outcome = if r.failed() {
                ScoringOutcome::zero(ParseStatus::Unparseable)
            } else {
                score_response(question, &r.response)
            };
            Ok(EvalRecord {
                outcome,
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(tally(&records))
}

/// Sort key for the canonical record order.
pub fn canonicalize(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| {
        (a.benchmark_id.as_str(), a.question_id.as_str())
            .cmp(&(b.benchmark_id.as_str(), b.question_id.as_str()))
    });
}

impl RunResult {
    pub fn to_jsonl(&self) -> String {
        let header = RunHeader {
            format: RUN_FORMAT.to_string(),
            model: self.model.clone(),
            seed: self.seed,
            qps: self.qps,
            warnings: self.warnings,
            started_at: self.started_at,
            finished_at: self.finished_at,
            record_count: self.records.len(),
            leaf_counts: self.leaf_counts.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let io = |source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io)?;
        file.write_all(self.to_jsonl().as_bytes()).map_err(io)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Parse a run file and check it is internally consistent: record count
    /// and leaf counts in the header must match the records.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, HarnessError> {
        let bad = |line: usize, message: String| HarnessError::RunFormat {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| bad(1, "empty run file".into()))?;
        let header: RunHeader =
            serde_json::from_str(first).map_err(|e| bad(1, format!("bad header: {e}")))?;
        if header.format != RUN_FORMAT {
            return Err(bad(1, format!("unsupported format `{}`", header.format)));
        }
        let mut records = Vec::with_capacity(header.record_count);
        for (idx, line) in lines {
            let record: EvalRecord =
                serde_json::from_str(line).map_err(|e| bad(idx + 1, e.to_string()))?;
            if record.latency.is_nan() || record.latency <= 0.0 {
                return Err(bad(
                    idx + 1,
                    format!("latency must be positive, got {}", record.latency),
                ));
            }
            records.push(record);
        }
        if records.len() != header.record_count {
            return Err(bad(
                1,
                format!(
                    "header promises {} records, found {}",
                    header.record_count,
                    records.len()
                ),
            ));
        }
        let counts = tally(&records);
        if counts != header.leaf_counts {
            return Err(bad(1, "header leaf counts disagree with records".into()));
        }
        let failures = records.iter().filter(|r| r.failed()).count();
        if failures != header.warnings {
            return Err(bad(
                1,
                format!(
                    "header reports {} warnings, records show {failures}",
                    header.warnings
                ),
            ));
        }
        Ok(Self {
            model: header.model,
            records,
            leaf_counts: header.leaf_counts,
            qps: header.qps,
            started_at: header.started_at,
            finished_at: header.finished_at,
            seed: header.seed,
            warnings: header.warnings,
        })
    }
}
