//! Reports, correlation tables, frontier plot data and the social
//! dominance table.
//!
//! Report JSON schema (keys in this order):
//! `model`, `goodness`, `subdomains` (hierarchy order), `leaves` (hierarchy
//! order), `qps`, `warnings`, `seed`, `sampler`, `root`, `config_digest`.
//!
//! Frontier plot data is CSV with header
//! `model,qps,log10_qps,goodness,ci_low,ci_high`, one row per model sorted by
//! model name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregator::{
    posterior_greater, sample_hierarchy, summarize, AggregatorError, LeafCounts, PosteriorSummary,
    SamplerConfig, DEFAULT_LEVEL,
};
use crate::corpus::HierarchyConfig;
use crate::harness::{parse_status_counts, RunResult};
use crate::prompting::ParseStatus;
use crate::stats::{compare, format_table, ComparisonRow, ScoreSeries, StatsError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Aggregator(#[from] AggregatorError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("run has no counts for hierarchy leaf benchmark(s): {}", .0.join(", "))]
    MissingLeafCounts(Vec<String>),
    #[error("pairing references unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("model `{0}` appears in more than one report")]
    DuplicateModel(String),
    #[error("need at least {needed} reports, got {got}")]
    TooFewReports { needed: usize, got: usize },
    #[error("failed to access {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainSummary {
    pub name: String,
    pub summary: PosteriorSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRow {
    pub benchmark: String,
    pub subdomain: String,
    pub successes: u64,
    pub total: u64,
    pub rate: f64,
    pub ambiguous: usize,
    pub unparseable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub goodness: PosteriorSummary,
    pub subdomains: Vec<SubdomainSummary>,
    pub leaves: Vec<LeafRow>,
    pub qps: f64,
    pub warnings: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub root: String,
    pub config_digest: String,
}

/// SHA-256 over the canonical hierarchy TOML and the sampler config JSON.
pub fn config_digest(hierarchy: &HierarchyConfig, sampler: &SamplerConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(hierarchy.to_toml_string().as_bytes());
    hasher.update(b"\n");
    hasher.update(serde_json::to_vec(sampler).expect("sampler serializes"));
    hex::encode(hasher.finalize())
}

/// Aggregate a run's leaf counts over `hierarchy`.
pub fn build_report(
    run: &RunResult,
    hierarchy: &HierarchyConfig,
    sampler: &SamplerConfig,
) -> Result<Report, ReportError> {
    let missing: Vec<String> = hierarchy
        .leaves()
        .filter(|l| !run.leaf_counts.contains_key(*l))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(ReportError::MissingLeafCounts(missing));
    }
    let samples = sample_hierarchy(&run.leaf_counts, hierarchy, sampler)?;
    let goodness = summarize(&samples.root, DEFAULT_LEVEL)?;
    let subdomains = samples
        .subdomains
        .iter()
        .map(|(name, xs)| {
            Ok(SubdomainSummary {
                name: name.clone(),
                summary: summarize(xs, DEFAULT_LEVEL)?,
            })
        })
        .collect::<Result<Vec<_>, AggregatorError>>()?;
    let status = parse_status_counts(&run.records);
    let leaves = hierarchy
        .subdomains()
        .iter()
        .flat_map(|sd| {
            sd.leaves
                .iter()
                .map(move |l| (sd.name.as_str(), l.as_str()))
        })
        .map(|(sd, leaf)| {
            let c = run.leaf_counts[leaf];
            let by_status = status.get(leaf);
            let count = |s| by_status.and_then(|m| m.get(&s)).copied().unwrap_or(0);
            LeafRow {
                benchmark: leaf.to_string(),
                subdomain: sd.to_string(),
                successes: c.successes(),
                total: c.total(),
                rate: c.rate(),
                ambiguous: count(ParseStatus::Ambiguous),
                unparseable: count(ParseStatus::Unparseable),
            }
        })
        .collect();
    Ok(Report {
        model: run.model.clone(),
        goodness,
        subdomains,
        leaves,
        qps: run.qps,
        warnings: run.warnings,
        seed: sampler.seed,
        sampler: sampler.clone(),
        root: hierarchy.root().to_string(),
        config_digest: config_digest(hierarchy, sampler),
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        fs::write(path, self.to_json()).map_err(|e| ReportError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|e| ReportError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ReportError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub model: String,
    pub qps: f64,
    pub log10_qps: f64,
    pub goodness: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const FRONTIER_HEADER: &str = "model,qps,log10_qps,goodness,ci_low,ci_high";

pub fn frontier(reports: &[Report]) -> Vec<FrontierPoint> {
    let mut points: Vec<FrontierPoint> = reports
        .iter()
        .map(|r| FrontierPoint {
            model: r.model.clone(),
            qps: r.qps,
            log10_qps: r.qps.log10(),
            goodness: r.goodness.mean,
            ci_low: r.goodness.ci_low,
            ci_high: r.goodness.ci_high,
        })
        .collect();
    points.sort_by(|a, b| a.model.cmp(&b.model));
    points
}

pub fn format_frontier(points: &[FrontierPoint]) -> String {
    let mut out = String::from(FRONTIER_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            p.model, p.qps, p.log10_qps, p.goodness, p.ci_low, p.ci_high
        ));
    }
    out
}

/// Goodness means of the reports as a score series keyed by model name.
pub fn goodness_series(reports: &[Report]) -> Result<ScoreSeries, ReportError> {
    let mut seen = BTreeSet::new();
    for r in reports {
        if !seen.insert(r.model.as_str()) {
            return Err(ReportError::DuplicateModel(r.model.clone()));
        }
    }
    Ok(ScoreSeries::new(
        reports.iter().map(|r| (r.model.clone(), r.goodness.mean)),
    )?)
}

/// Correlation rows: `MPG vs <external>` for each external series in order,
/// then `<a> vs <b>` for each pair of external series.
pub fn correlation_rows(
    reports: &[Report],
    external: &[(String, ScoreSeries)],
) -> Result<Vec<ComparisonRow>, ReportError> {
    if reports.len() < 3 {
        return Err(ReportError::TooFewReports {
            needed: 3,
            got: reports.len(),
        });
    }
    let mpg = goodness_series(reports)?;
    let mut rows = Vec::new();
    for (name, series) in external {
        rows.push(compare(format!("MPG vs {name}"), &mpg, series)?);
    }
    for (i, (a_name, a)) in external.iter().enumerate() {
        for (b_name, b) in &external[i + 1..] {
            rows.push(compare(format!("{a_name} vs {b_name}"), a, b)?);
        }
    }
    Ok(rows)
}

pub fn correlation_table(rows: &[ComparisonRow]) -> String {
    format_table(rows)
}

/// Benchmarks whose counts are pooled on one side of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BenchmarkGroup {
    One(String),
    Many(Vec<String>),
}

impl BenchmarkGroup {
    pub fn ids(&self) -> Vec<&str> {
        match self {
            BenchmarkGroup::One(id) => vec![id.as_str()],
            BenchmarkGroup::Many(ids) => ids.iter().map(String::as_str).collect(),
        }
    }

    fn counts(
        &self,
        leaf_counts: &BTreeMap<String, LeafCounts>,
    ) -> Result<LeafCounts, ReportError> {
        let members = self
            .ids()
            .into_iter()
            .map(|id| {
                leaf_counts
                    .get(id)
                    .copied()
                    .ok_or_else(|| ReportError::UnknownBenchmark(id.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        LeafCounts::pool(members)
            .ok_or_else(|| ReportError::UnknownBenchmark("<empty group>".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCategory {
    pub name: String,
    pub ambiguous: BenchmarkGroup,
    pub unambiguous: BenchmarkGroup,
}

/// Ambiguous/unambiguous benchmark pairs, one per social category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingConfig {
    #[serde(rename = "category")]
    pub categories: Vec<PairCategory>,
}

pub const DEFAULT_PAIRS_TOML: &str = r#"[[category]]
name = "Race"
ambiguous = "bbq_race_ambig"
unambiguous = "bbq_race_disambig"

[[category]]
name = "SO"
ambiguous = "bbq_sexuality_ambig"
unambiguous = "bbq_sexuality_disambig"

[[category]]
name = "SES"
ambiguous = "bbq_ses_ambig"
unambiguous = "bbq_ses_disambig"
"#;

impl PairingConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, ReportError> {
        let cfg: PairingConfig = toml::from_str(text).map_err(|e| ReportError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        if cfg.categories.is_empty() {
            return Err(ReportError::Parse {
                path: origin.to_path_buf(),
                message: "no [[category]] entries".into(),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|e| ReportError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn bbq_default() -> Self {
        Self::from_toml_str(DEFAULT_PAIRS_TOML, Path::new("<default>")).expect("valid default")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocialRow {
    pub model: String,
    pub probabilities: Vec<f64>,
}

/// `P(ambiguous > unambiguous)` per category for each run, with the same
/// draws and seed for every cell.
pub fn social_rows(
    runs: &[RunResult],
    pairs: &PairingConfig,
    draws: u64,
    seed: u64,
    epsilon: f64,
) -> Result<Vec<SocialRow>, ReportError> {
    runs.iter()
        .map(|run| {
            let probabilities = pairs
                .categories
                .iter()
                .map(|c| {
                    let a = c.ambiguous.counts(&run.leaf_counts)?;
                    let b = c.unambiguous.counts(&run.leaf_counts)?;
                    Ok(posterior_greater(a, b, draws, seed, epsilon)?)
                })
                .collect::<Result<Vec<_>, ReportError>>()?;
            Ok(SocialRow {
                model: run.model.clone(),
                probabilities,
            })
        })
        .collect()
}

/// `Model,<category>...` header, then one row per model with two decimals.
pub fn format_social(pairs: &PairingConfig, rows: &[SocialRow]) -> String {
    let mut out = String::from("Model");
    for c in &pairs.categories {
        out.push(',');
        out.push_str(&c.name);
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.model);
        for p in &row.probabilities {
            out.push_str(&format!(",{p:.2}"));
        }
        out.push('\n');
    }
    out
}
