//! Prompt templates and response scoring.
//!
//! Multiple-choice answers are scored by a 1-gram lookup of the option
//! letters; boolean answers by comparing the single `true`/`false` token with
//! the gold value.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Question, QuestionKind};

const PREAMBLE: &str =
    "You are a succinct and smart LLM who answers questions parsimoniously. Here is your question: ";
const MC_SUFFIX: &str = "Please answer with the letter corresponding to the choice, only!";
const BOOL_SUFFIX: &str = "Answer in a True/False only!";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    Ambiguous,
    Unparseable,
}

/// Binary score plus how the response parsed. `score == 1` implies `Clean`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawOutcome")]
pub struct ScoringOutcome {
    score: u8,
    parse_status: ParseStatus,
}

#[derive(Deserialize)]
struct RawOutcome {
    score: u8,
    parse_status: ParseStatus,
}

impl TryFrom<RawOutcome> for ScoringOutcome {
    type Error = String;

    fn try_from(raw: RawOutcome) -> Result<Self, Self::Error> {
        match (raw.score, raw.parse_status) {
            (0, status) => Ok(Self::zero(status)),
            (1, ParseStatus::Clean) => Ok(Self::correct()),
            (1, status) => Err(format!("score 1 with parse status {status:?}")),
            (s, _) => Err(format!("score must be 0 or 1, got {s}")),
        }
    }
}

impl ScoringOutcome {
    pub fn correct() -> Self {
        Self {
            score: 1,
            parse_status: ParseStatus::Clean,
        }
    }

    pub fn zero(parse_status: ParseStatus) -> Self {
        Self {
            score: 0,
            parse_status,
        }
    }

    fn clean(correct: bool) -> Self {
        if correct {
            Self::correct()
        } else {
            Self::zero(ParseStatus::Clean)
        }
    }

    pub fn score(&self) -> u8 {
        self.score
    }

    pub fn is_correct(&self) -> bool {
        self.score == 1
    }

    pub fn parse_status(&self) -> ParseStatus {
        self.parse_status
    }
}

pub fn render_prompt(q: &Question) -> String {
    match q.kind {
        QuestionKind::MultipleChoice => {
            let options = q
                .options
                .iter()
                .map(|o| format!("{}: {}", o.letter, o.text))
                .collect::<Vec<_>>()
                .join(", ");
            format!(
                "{PREAMBLE}{} And here are your options: ({options}). {MC_SUFFIX}",
                q.text
            )
        }
        QuestionKind::Boolean => format!("{PREAMBLE}{} {BOOL_SUFFIX}", q.text),
    }
}

/// Split a response into unigrams: maximal runs of alphanumeric characters.
/// Whitespace, punctuation and markup characters (`*`, `_`, `#`, `` ` ``,
/// brackets, ...) all act as separators, so `**B**`, `(B)` and `B.` each
/// yield the token `B`, while `A100` stays a single token.
pub fn unigrams(response: &str) -> impl Iterator<Item = &str> {
    response
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
}

pub fn score_mc(q: &Question, response: &str) -> ScoringOutcome {
    debug_assert_eq!(q.kind, QuestionKind::MultipleChoice);
    let letters: BTreeSet<char> = q.option_letters().collect();
    let found: BTreeSet<char> = unigrams(response)
        .filter_map(|tok| {
            let mut chars = tok.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if letters.contains(&c) => Some(c),
                _ => None,
            }
        })
        .collect();
    match found.len() {
        0 => ScoringOutcome::zero(ParseStatus::Unparseable),
        1 => {
            let answer = found.into_iter().next().expect("one letter");
            let mut gold = q.gold.chars();
            ScoringOutcome::clean(gold.next() == Some(answer) && gold.next().is_none())
        }
        _ => ScoringOutcome::zero(ParseStatus::Ambiguous),
    }
}

pub fn score_bool(q: &Question, response: &str) -> ScoringOutcome {
    debug_assert_eq!(q.kind, QuestionKind::Boolean);
    let mut saw_true = false;
    let mut saw_false = false;
    for tok in unigrams(response) {
        if tok.eq_ignore_ascii_case("true") {
            saw_true = true;
        } else if tok.eq_ignore_ascii_case("false") {
            saw_false = true;
        }
    }
    match (saw_true, saw_false, q.gold_bool()) {
        (true, true, _) => ScoringOutcome::zero(ParseStatus::Ambiguous),
        (false, false, _) => ScoringOutcome::zero(ParseStatus::Unparseable),
        (answer, _, Some(gold)) => ScoringOutcome::clean(answer == gold),
        (_, _, None) => ScoringOutcome::zero(ParseStatus::Clean),
    }
}

pub fn score_response(q: &Question, response: &str) -> ScoringOutcome {
    match q.kind {
        QuestionKind::MultipleChoice => score_mc(q, response),
        QuestionKind::Boolean => score_bool(q, response),
    }
}
