//! Benchmark data model and the three-level hierarchy configuration.
//!
//! Questions live in line-delimited JSON files, one benchmark per file; the
//! benchmark id is the file stem. The hierarchy is a TOML file:
//!
//! ```toml
//! root = "MPG"
//!
//! [subdomains]
//! "Problem Solving" = ["mmlu_college_cs", "mmlu_college_math"]
//! ```
//!
//! Subdomain order in the file is significant: latent draws are allocated in
//! config order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate question id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: question `{id}`: {reason}")]
    InvalidQuestion {
        path: PathBuf,
        line: usize,
        id: String,
        reason: String,
    },
    #[error("{path}: benchmark contains no questions")]
    EmptyBenchmark { path: PathBuf },
    #[error("{path}: no benchmark files (*.jsonl) found")]
    EmptyCorpus { path: PathBuf },
    #[error("benchmark `{0}` loaded twice")]
    DuplicateBenchmark(String),
    #[error("benchmark `{id}`: {reason}")]
    InvalidBenchmark { id: String, reason: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HierarchyError {
    #[error("failed to read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("hierarchy root name is empty")]
    EmptyRoot,
    #[error("hierarchy has no subdomains")]
    NoSubdomains,
    #[error("subdomain `{0}` has no leaf benchmarks")]
    EmptySubdomain(String),
    #[error("benchmark `{id}` appears under both `{first}` and `{second}`")]
    DuplicateLeaf {
        id: String,
        first: String,
        second: String,
    },
    #[error("unknown benchmark id(s): {}", .0.join(", "))]
    UnknownBenchmarks(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionKind {
    #[serde(rename = "mc")]
    MultipleChoice,
    #[serde(rename = "bool")]
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: char,
    pub text: String,
}

impl AnswerOption {
    pub fn new(letter: char, text: impl Into<String>) -> Self {
        Self {
            letter,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub kind: QuestionKind,
    pub text: String,
    #[serde(default)]
    pub options: Vec<AnswerOption>,
    pub gold: String,
}

impl Question {
    pub fn multiple_choice(
        id: impl Into<String>,
        text: impl Into<String>,
        options: &[&str],
        gold: char,
    ) -> Self {
        Self {
            id: id.into(),
            kind: QuestionKind::MultipleChoice,
            text: text.into(),
            options: options
                .iter()
                .zip('A'..='Z')
                .map(|(t, l)| AnswerOption::new(l, *t))
                .collect(),
            gold: gold.to_string(),
        }
    }

    pub fn boolean(id: impl Into<String>, text: impl Into<String>, gold: bool) -> Self {
        Self {
            id: id.into(),
            kind: QuestionKind::Boolean,
            text: text.into(),
            options: Vec::new(),
            gold: if gold { "True" } else { "False" }.to_string(),
        }
    }

    pub fn option_letters(&self) -> impl Iterator<Item = char> + '_ {
        self.options.iter().map(|o| o.letter)
    }

    /// Gold answer of a Boolean question. `None` for multiple choice.
    pub fn gold_bool(&self) -> Option<bool> {
        match (self.kind, self.gold.as_str()) {
            (QuestionKind::Boolean, "True") => Some(true),
            (QuestionKind::Boolean, "False") => Some(false),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match self.kind {
            QuestionKind::MultipleChoice => {
                if self.options.len() < 2 {
                    return Err(format!(
                        "multiple-choice question needs at least 2 options, got {}",
                        self.options.len()
                    ));
                }
                if self.options.len() > 26 {
                    return Err("more than 26 options".into());
                }
                for (option, expected) in self.options.iter().zip('A'..='Z') {
                    if option.letter != expected {
                        return Err(format!(
                            "option letters must run A, B, C, ... in order; found `{}` where `{}` was expected",
                            option.letter, expected
                        ));
                    }
                }
                let mut gold = self.gold.chars();
                match (gold.next(), gold.next()) {
                    (Some(g), None) if self.option_letters().any(|l| l == g) => Ok(()),
                    _ => Err(format!(
                        "gold `{}` is not one of the option letters",
                        self.gold
                    )),
                }
            }
            QuestionKind::Boolean => {
                if !self.options.is_empty() {
                    return Err("boolean question must not carry options".into());
                }
                if self.gold_bool().is_none() {
                    return Err(format!(
                        "boolean gold must be \"True\" or \"False\", got `{}`",
                        self.gold
                    ));
                }
                Ok(())
            }
        }
    }
}

/// One leaf of the hierarchy. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Benchmark {
    id: String,
    display_name: String,
    questions: Vec<Question>,
}

impl Benchmark {
    pub fn new(
        id: impl Into<String>,
        display_name: impl Into<String>,
        questions: Vec<Question>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let invalid = |reason: String| CorpusError::InvalidBenchmark {
            id: id.clone(),
            reason,
        };
        if id.is_empty() {
            return Err(invalid("empty benchmark id".into()));
        }
        if questions.is_empty() {
            return Err(invalid("no questions".into()));
        }
        let mut seen = HashSet::new();
        for q in &questions {
            q.validate()
                .map_err(|e| invalid(format!("question `{}`: {e}", q.id)))?;
            if !seen.insert(q.id.as_str()) {
                return Err(invalid(format!("duplicate question id `{}`", q.id)));
            }
        }
        Ok(Self {
            id,
            display_name: display_name.into(),
            questions,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    /// Number of questions, `N_i` in the aggregation.
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for q in &self.questions {
            out.push_str(&serde_json::to_string(q).expect("question serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        fs::write(path, self.to_jsonl()).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Load one benchmark from a JSONL file. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn load_benchmark(path: &Path) -> Result<Benchmark, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_benchmark(path, &id, &text)
}

fn parse_benchmark(path: &Path, id: &str, text: &str) -> Result<Benchmark, CorpusError> {
    let mut questions = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(raw).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(q.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: q.id,
            });
        }
        if let Err(reason) = q.validate() {
            return Err(CorpusError::InvalidQuestion {
                path: path.to_path_buf(),
                line,
                id: q.id,
                reason,
            });
        }
        questions.push(q);
    }
    if questions.is_empty() {
        return Err(CorpusError::EmptyBenchmark {
            path: path.to_path_buf(),
        });
    }
    Benchmark::new(id, id, questions)
}

/// All loaded benchmarks, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    benchmarks: BTreeMap<String, Benchmark>,
}

impl Corpus {
    pub fn new(benchmarks: impl IntoIterator<Item = Benchmark>) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        for b in benchmarks {
            let id = b.id().to_string();
            if map.insert(id.clone(), b).is_some() {
                return Err(CorpusError::DuplicateBenchmark(id));
            }
        }
        Ok(Self { benchmarks: map })
    }

    /// Load every `*.jsonl` file in `dir` (non-recursive).
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            if path.is_file() && path.extension().is_some_and(|e| e == "jsonl") {
                paths.push(path);
            }
        }
        if paths.is_empty() {
            return Err(CorpusError::EmptyCorpus {
                path: dir.to_path_buf(),
            });
        }
        paths.sort();
        let benchmarks = paths
            .iter()
            .map(|p| load_benchmark(p))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(benchmarks)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for b in self.benchmarks.values() {
            b.write_jsonl(&dir.join(format!("{}.jsonl", b.id())))?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Benchmark> {
        self.benchmarks.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.benchmarks.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Benchmark> {
        self.benchmarks.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.benchmarks.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.benchmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.benchmarks.is_empty()
    }

    /// `N = sum of N_i` over the hierarchy's leaves.
    pub fn total_questions(&self, hierarchy: &HierarchyConfig) -> usize {
        hierarchy
            .leaves()
            .filter_map(|id| self.get(id))
            .map(Benchmark::len)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subdomain {
    pub name: String,
    pub leaves: Vec<String>,
}

/// Root, subdomains, leaves. Exactly three levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HierarchyConfig {
    root: String,
    subdomains: Vec<Subdomain>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyFile {
    root: String,
    subdomains: IndexMap<String, Vec<String>>,
}

/// The default taxonomy: three subdomains with 6, 6 and 2 leaves.
pub const DEFAULT_HIERARCHY_TOML: &str = r#"root = "MPG"

[subdomains]
"Factual Knowledge" = ["squad", "global_facts", "boolq", "climate_fever", "openbookqa", "arc_challenge"]
"Social Sensitivity" = ["bbq_sexuality_ambig", "bbq_sexuality_disambig", "bbq_race_ambig", "bbq_race_disambig", "bbq_ses_ambig", "bbq_ses_disambig"]
"Problem Solving" = ["mmlu_college_cs", "mmlu_college_math"]
"#;

impl HierarchyConfig {
    /// Build and structurally validate a hierarchy. References to benchmarks
    /// are checked separately by [`HierarchyConfig::check_references`].
    pub fn new(
        root: impl Into<String>,
        subdomains: impl IntoIterator<Item = (String, Vec<String>)>,
    ) -> Result<Self, HierarchyError> {
        let root = root.into();
        if root.trim().is_empty() {
            return Err(HierarchyError::EmptyRoot);
        }
        let subdomains: Vec<Subdomain> = subdomains
            .into_iter()
            .map(|(name, leaves)| Subdomain { name, leaves })
            .collect();
        if subdomains.is_empty() {
            return Err(HierarchyError::NoSubdomains);
        }
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for sd in &subdomains {
            if sd.leaves.is_empty() {
                return Err(HierarchyError::EmptySubdomain(sd.name.clone()));
            }
            for leaf in &sd.leaves {
                if let Some(first) = owner.insert(leaf, &sd.name) {
                    return Err(HierarchyError::DuplicateLeaf {
                        id: leaf.clone(),
                        first: first.to_string(),
                        second: sd.name.clone(),
                    });
                }
            }
        }
        Ok(Self { root, subdomains })
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self, HierarchyError> {
        let file: HierarchyFile = toml::from_str(text).map_err(|e| HierarchyError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::new(file.root, file.subdomains)
    }

    pub fn mpg_default() -> Self {
        Self::from_toml_str(DEFAULT_HIERARCHY_TOML, Path::new("<default>"))
            .expect("default hierarchy is valid")
    }

    pub fn to_toml_string(&self) -> String {
        let file = HierarchyFile {
            root: self.root.clone(),
            subdomains: self
                .subdomains
                .iter()
                .map(|sd| (sd.name.clone(), sd.leaves.clone()))
                .collect(),
        };
        toml::to_string(&file).expect("hierarchy serializes")
    }

    /// Every leaf must name a known benchmark. All unknown ids are reported
    /// at once, in config order.
    pub fn check_references<'a>(
        &self,
        known: impl IntoIterator<Item = &'a str>,
    ) -> Result<(), HierarchyError> {
        let known: BTreeSet<&str> = known.into_iter().collect();
        let missing: Vec<String> = self
            .leaves()
            .filter(|id| !known.contains(id))
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(HierarchyError::UnknownBenchmarks(missing))
        }
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn subdomains(&self) -> &[Subdomain] {
        &self.subdomains
    }

    /// Leaf ids in config order.
    pub fn leaves(&self) -> impl Iterator<Item = &str> {
        self.subdomains
            .iter()
            .flat_map(|sd| sd.leaves.iter().map(String::as_str))
    }

    pub fn subdomain_of(&self, leaf: &str) -> Option<&str> {
        self.subdomains
            .iter()
            .find(|sd| sd.leaves.iter().any(|l| l == leaf))
            .map(|sd| sd.name.as_str())
    }
}

pub fn load_hierarchy(path: &Path, corpus: &Corpus) -> Result<HierarchyConfig, HierarchyError> {
    let hierarchy = read_hierarchy(path)?;
    hierarchy.check_references(corpus.ids())?;
    Ok(hierarchy)
}

/// Parse and structurally validate a hierarchy file without checking leaf
/// references.
pub fn read_hierarchy(path: &Path) -> Result<HierarchyConfig, HierarchyError> {
    let text = fs::read_to_string(path).map_err(|e| HierarchyError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    HierarchyConfig::from_toml_str(&text, path)
}
