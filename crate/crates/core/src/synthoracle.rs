//! Synthetic model with known per-benchmark accuracy.
//!
//! Every answer is a pure function of `(seed, benchmark_id, question_id)`:
//! each question gets its own keyed stream and a fixed sequence of draws, so
//! evaluation order and parallelism never change what the model says.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Benchmark, Corpus, CorpusError, HierarchyConfig, Question, QuestionKind};
use crate::seeding::{substream, Stream};

/// Response used for wrong answers in garbage mode. Contains no uppercase
/// single-letter token and no true/false token.
pub const GARBAGE_RESPONSE: &str = "no idea, sorry";

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("synthetic model has no accuracy for benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("accuracy {value} for benchmark `{benchmark}` is outside [0, 1]")]
    InvalidAccuracy { benchmark: String, value: f64 },
    #[error(
        "invalid latency distribution: mean {mean}, jitter {jitter} (need 0 <= jitter < mean)"
    )]
    InvalidLatency { mean: f64, jitter: f64 },
    #[error("failure rate {0} is outside [0, 1]")]
    InvalidFailureRate(f64),
}

/// Uniform latency on `[mean - jitter, mean + jitter]`, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyDist {
    pub mean: f64,
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub name: String,
    pub accuracy_by_benchmark: BTreeMap<String, f64>,
    pub latency: LatencyDist,
    pub seed: u64,
    /// Wrong answers become unparseable text instead of another option.
    #[serde(default)]
    pub garbage_mode: bool,
    /// Fraction of questions on which the provider fails permanently.
    #[serde(default)]
    pub failure_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthAnswer {
    pub response: String,
    pub latency: f64,
    /// Whether the keyed correctness draw came out correct.
    pub correct: bool,
}

struct Draws {
    correct: f64,
    wrong_pick: f64,
    latency: f64,
    failure: f64,
}

impl SyntheticModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (benchmark, &value) in &self.accuracy_by_benchmark {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::InvalidAccuracy {
                    benchmark: benchmark.clone(),
                    value,
                });
            }
        }
        let LatencyDist { mean, jitter } = self.latency;
        if !(mean > 0.0 && mean.is_finite() && jitter >= 0.0 && jitter < mean) {
            return Err(SynthError::InvalidLatency { mean, jitter });
        }
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(SynthError::InvalidFailureRate(self.failure_rate));
        }
        Ok(())
    }

    /// Every benchmark the model is asked about must have an accuracy.
    pub fn check_benchmarks<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), SynthError> {
        for id in ids {
            if !self.accuracy_by_benchmark.contains_key(id) {
                return Err(SynthError::UnknownBenchmark(id.to_string()));
            }
        }
        Ok(())
    }

    fn draws(&self, benchmark_id: &str, question_id: &str) -> Draws {
        let mut rng: ChaCha8Rng = substream(
            Stream::SyntheticAnswer,
            self.seed,
            &[benchmark_id.as_bytes(), question_id.as_bytes()],
        );
        Draws {
            correct: rng.random(),
            wrong_pick: rng.random(),
            latency: rng.random(),
            failure: rng.random(),
        }
    }

    /// Whether the provider fails on this question. Keyed like the answer,
    /// from a draw that does not affect the answer itself.
    pub fn fails_on(&self, benchmark_id: &str, question_id: &str) -> bool {
        self.failure_rate > 0.0 && self.draws(benchmark_id, question_id).failure < self.failure_rate
    }

    pub fn synth_answer(
        &self,
        benchmark_id: &str,
        q: &Question,
    ) -> Result<SynthAnswer, SynthError> {
        let accuracy = *self
            .accuracy_by_benchmark
            .get(benchmark_id)
            .ok_or_else(|| SynthError::UnknownBenchmark(benchmark_id.to_string()))?;
        let d = self.draws(benchmark_id, &q.id);
        let correct = d.correct < accuracy;
        let response = if correct {
            q.gold.clone()
        } else if self.garbage_mode {
            GARBAGE_RESPONSE.to_string()
        } else {
            wrong_answer(q, d.wrong_pick)
        };
        let LatencyDist { mean, jitter } = self.latency;
        let latency = if jitter == 0.0 {
            mean
        } else {
            mean + jitter * (2.0 * d.latency - 1.0)
        };
        Ok(SynthAnswer {
            response,
            latency,
            correct,
        })
    }
}

fn wrong_answer(q: &Question, pick: f64) -> String {
    match q.kind {
        QuestionKind::Boolean => match q.gold_bool() {
            Some(true) => "False".into(),
            _ => "True".into(),
        },
        QuestionKind::MultipleChoice => {
            let wrong: Vec<char> = q
                .option_letters()
                .filter(|l| !q.gold.starts_with(*l))
                .collect();
            let idx = ((pick * wrong.len() as f64) as usize).min(wrong.len() - 1);
            wrong[idx].to_string()
        }
    }
}

/// A corpus of placeholder questions for every leaf of `hierarchy`: four-way
/// multiple choice with a keyed random gold letter, with every fifth
/// question boolean.
pub fn synthetic_corpus(
    hierarchy: &HierarchyConfig,
    questions_per_leaf: usize,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    let benchmarks = hierarchy
        .leaves()
        .map(|leaf| {
            let mut rng = substream(Stream::SyntheticCorpus, seed, &[leaf.as_bytes()]);
            let questions = (0..questions_per_leaf)
                .map(|j| {
                    let id = format!("{leaf}-{j:05}");
                    let text = format!("Synthetic question {j} of {leaf}?");
                    if j % 5 == 4 {
                        Question::boolean(id, text, rng.random())
                    } else {
                        let gold = (b'A' + rng.random_range(0..4u8)) as char;
                        Question::multiple_choice(id, text, &["w", "x", "y", "z"], gold)
                    }
                })
                .collect();
            Benchmark::new(leaf, leaf, questions)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Corpus::new(benchmarks)
}
