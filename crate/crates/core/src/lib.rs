//! Benchmark aggregation and model evaluation.
//!
//! Models answer a tree of question-level benchmarks (root, subdomains,
//! leaves). Leaf success counts become Beta posteriors, and forward Monte
//! Carlo pushes simulated latent scores up the tree to produce a single
//! "Goodness" posterior with a credible interval. Sequential per-prompt
//! latency gives the "Performance" number in queries per second.

pub mod aggregator;
pub mod corpus;
pub mod harness;
pub mod prompting;
pub mod report;
pub mod seeding;
pub mod stats;
pub mod synthoracle;

pub use aggregator::{LeafCounts, PosteriorSummary, SamplerConfig};
pub use corpus::{Benchmark, Corpus, HierarchyConfig, Question, QuestionKind};
pub use harness::{EvalRecord, ModelSpec, RunConfig, RunResult};
pub use prompting::{ParseStatus, ScoringOutcome};
pub use report::Report;
