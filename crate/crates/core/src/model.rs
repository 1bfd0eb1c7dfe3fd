//! Domain types shared across the engine: questions, answer labels,
//! reasoner responses and navigator directions, plus answer extraction and
//! the validity filter applied to every raw generation.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Highest number of choices a multiple-choice question may carry (A..Z).
pub const MAX_CHOICES: usize = 26;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("multiple-choice questions need between 2 and {MAX_CHOICES} choices, got {0}")]
    ChoiceCount(usize),
    #[error("question {id}: expected {expected} choices, got {found}")]
    ChoiceMismatch { id: String, expected: usize, found: usize },
    #[error("question {id}: gold answer {gold} is not valid for {kind}")]
    InvalidGold { id: String, gold: AnswerLabel, kind: TaskKind },
    #[error("unknown answer label {0:?}")]
    UnknownLabel(String),
    #[error("direction text must not be empty")]
    EmptyDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TaskKind {
    MultipleChoice { num_choices: usize },
    FactCheck,
}

impl TaskKind {
    pub fn multiple_choice(num_choices: usize) -> Result<Self, ModelError> {
        if !(2..=MAX_CHOICES).contains(&num_choices) {
            return Err(ModelError::ChoiceCount(num_choices));
        }
        Ok(TaskKind::MultipleChoice { num_choices })
    }

    /// Every label a well-formed answer may take, in canonical order.
    pub fn labels(&self) -> Vec<AnswerLabel> {
        match *self {
            TaskKind::MultipleChoice { num_choices } => (0..num_choices).map(AnswerLabel::Choice).collect(),
            TaskKind::FactCheck => FeverLabel::ALL.iter().copied().map(AnswerLabel::Fever).collect(),
        }
    }

    pub fn admits(&self, label: &AnswerLabel) -> bool {
        match (*self, label) {
            (TaskKind::MultipleChoice { num_choices }, AnswerLabel::Choice(i)) => *i < num_choices,
            (TaskKind::FactCheck, AnswerLabel::Fever(_)) => true,
            _ => false,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::MultipleChoice { num_choices } => write!(f, "multiple-choice({num_choices})"),
            TaskKind::FactCheck => f.write_str("fact-check"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeverLabel {
    Supports,
    Refutes,
    NotEnoughInfo,
}

impl FeverLabel {
    pub const ALL: [FeverLabel; 3] = [FeverLabel::Supports, FeverLabel::Refutes, FeverLabel::NotEnoughInfo];

    /// Dataset spelling.
    pub fn as_str(&self) -> &'static str {
        match self {
            FeverLabel::Supports => "SUPPORTS",
            FeverLabel::Refutes => "REFUTES",
            FeverLabel::NotEnoughInfo => "NOT ENOUGH INFO",
        }
    }

    /// Inverse of [`FeverLabel::as_str`]; exact spelling only.
    pub fn parse(s: &str) -> Option<FeverLabel> {
        FeverLabel::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl Serialize for FeverLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FeverLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        FeverLabel::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown FEVER label {s:?}")))
    }
}

/// A final answer: a 0-based choice index (rendered as a letter) or a
/// fact-verification label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnswerLabel {
    Choice(usize),
    Fever(FeverLabel),
}

impl AnswerLabel {
    /// Letter rendering: 0 -> "A", 1 -> "B", ...
    pub fn letter(index: usize) -> char {
        assert!(index < MAX_CHOICES, "choice index {index} has no letter");
        (b'A' + index as u8) as char
    }

    pub fn from_letter(c: char) -> Option<AnswerLabel> {
        let upper = c.to_ascii_uppercase();
        if upper.is_ascii_uppercase() {
            Some(AnswerLabel::Choice((upper as u8 - b'A') as usize))
        } else {
            None
        }
    }

    pub fn same_kind(&self, other: &AnswerLabel) -> bool {
        matches!(
            (self, other),
            (AnswerLabel::Choice(_), AnswerLabel::Choice(_)) | (AnswerLabel::Fever(_), AnswerLabel::Fever(_))
        )
    }
}

impl fmt::Display for AnswerLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerLabel::Choice(i) => write!(f, "{}", AnswerLabel::letter(*i)),
            AnswerLabel::Fever(l) => f.write_str(l.as_str()),
        }
    }
}

impl FromStr for AnswerLabel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let mut chars = t.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_ascii_uppercase() {
                return Ok(AnswerLabel::Choice((c as u8 - b'A') as usize));
            }
        }
        FeverLabel::parse(t).map(AnswerLabel::Fever).ok_or_else(|| ModelError::UnknownLabel(s.to_string()))
    }
}

impl Serialize for AnswerLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AnswerLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Structural equality of two answers of the same task kind.
///
/// Comparing a choice with a fact-check label is a caller bug and panics.
pub fn answers_equal(a: &AnswerLabel, b: &AnswerLabel) -> bool {
    assert!(a.same_kind(b), "answers_equal: mismatched task kinds ({a} vs {b})");
    a == b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainGroup {
    #[serde(rename = "STEM")]
    Stem,
    Social,
    Humanity,
    Other,
    #[serde(rename = "FEVER")]
    Fever,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub kind: TaskKind,
    pub prompt_text: String,
    #[serde(default)]
    pub choices: Vec<String>,
    #[serde(default)]
    pub gold: Option<AnswerLabel>,
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub domain_group: Option<DomainGroup>,
}

impl Question {
    pub fn multiple_choice(
        id: impl Into<String>,
        prompt_text: impl Into<String>,
        choices: Vec<String>,
        gold: Option<AnswerLabel>,
    ) -> Result<Self, ModelError> {
        let kind = TaskKind::multiple_choice(choices.len())?;
        let q = Question {
            id: id.into(),
            kind,
            prompt_text: prompt_text.into(),
            choices,
            gold,
            subject: None,
            domain_group: None,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn fact_check(
        id: impl Into<String>,
        claim: impl Into<String>,
        gold: Option<FeverLabel>,
    ) -> Result<Self, ModelError> {
        let q = Question {
            id: id.into(),
            kind: TaskKind::FactCheck,
            prompt_text: claim.into(),
            choices: Vec::new(),
            gold: gold.map(AnswerLabel::Fever),
            subject: None,
            domain_group: Some(DomainGroup::Fever),
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_subject(mut self, subject: impl Into<String>, group: Option<DomainGroup>) -> Self {
        self.subject = Some(subject.into());
        self.domain_group = group;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.kind {
            TaskKind::MultipleChoice { num_choices } => {
                if !(2..=MAX_CHOICES).contains(&num_choices) {
                    return Err(ModelError::ChoiceCount(num_choices));
                }
                if self.choices.len() != num_choices {
                    return Err(ModelError::ChoiceMismatch {
                        id: self.id.clone(),
                        expected: num_choices,
                        found: self.choices.len(),
                    });
                }
            }
            TaskKind::FactCheck => {
                if !self.choices.is_empty() {
                    return Err(ModelError::ChoiceMismatch {
                        id: self.id.clone(),
                        expected: 0,
                        found: self.choices.len(),
                    });
                }
            }
        }
        if let Some(gold) = self.gold {
            if !self.kind.admits(&gold) {
                return Err(ModelError::InvalidGold { id: self.id.clone(), gold, kind: self.kind });
            }
        }
        Ok(())
    }

    /// Choices rendered one per line as `A. text`.
    pub fn render_choices(&self) -> String {
        self.choices
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {}", AnswerLabel::letter(i), c))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseOrigin {
    Initial,
    Reflected,
}

/// A reasoner state: the rationale and the extracted final answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub raw_text: String,
    pub answer: Option<AnswerLabel>,
    pub rationale: String,
    pub valid: bool,
    pub origin: ResponseOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSource {
    Generative,
    Fixed,
}

/// A navigator action: free-text guidance for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction {
    pub text: String,
    pub source: DirectionSource,
}

impl Direction {
    pub fn new(text: impl Into<String>, source: DirectionSource) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyDirection);
        }
        Ok(Direction { text, source })
    }
}

fn finish_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)finish\s*\[([^\]]*)\]").unwrap())
}

fn answer_is_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s+is\s*:?\s*\(?\s*([A-Za-z])\s*\)?(?:[\s.,;:!]|$)").unwrap())
}

fn trailing_paren_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([A-Z])\)\s*\.?\s*$").unwrap())
}

fn fever_word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(supports|refutes|not[ _]enough[ _]info)\b").unwrap())
}

fn fever_from_word(word: &str) -> FeverLabel {
    let w = word.to_ascii_lowercase();
    if w == "supports" {
        FeverLabel::Supports
    } else if w == "refutes" {
        FeverLabel::Refutes
    } else {
        FeverLabel::NotEnoughInfo
    }
}

fn last_fever_word(text: &str) -> Option<FeverLabel> {
    fever_word_re().captures_iter(text).last().map(|c| fever_from_word(&c[1]))
}

fn choice_in_range(label: AnswerLabel, kind: TaskKind) -> Option<AnswerLabel> {
    kind.admits(&label).then_some(label)
}

fn parse_bracket_payload(payload: &str, kind: TaskKind) -> Option<AnswerLabel> {
    match kind {
        TaskKind::MultipleChoice { .. } => {
            let t = payload.trim().trim_start_matches('(').trim_start();
            let first = t.chars().next()?;
            // "B", "B)", "B. text" all name choice B; "Both" does not.
            let rest = &t[first.len_utf8()..];
            if rest.chars().next().is_some_and(|c| c.is_ascii_alphanumeric()) {
                return None;
            }
            AnswerLabel::from_letter(first).and_then(|l| choice_in_range(l, kind))
        }
        TaskKind::FactCheck => last_fever_word(payload).map(AnswerLabel::Fever),
    }
}

/// Extracts the final answer from a raw generation.
///
/// Priority: the last `Finish[X]` marker, then a trailing "answer is X" or
/// `(X)` phrase, then (fact-check only) the last label word in the text.
pub fn parse_answer(raw_text: &str, kind: TaskKind) -> Option<AnswerLabel> {
    if let Some(c) = finish_re().captures_iter(raw_text).last() {
        if let Some(label) = parse_bracket_payload(&c[1], kind) {
            return Some(label);
        }
    }
    match kind {
        TaskKind::MultipleChoice { .. } => {
            if let Some(c) = answer_is_re().captures_iter(raw_text).last() {
                let letter = c[1].chars().next().unwrap();
                // lowercase letters only count when written as a label, e.g. "answer is (b)"
                if letter.is_ascii_uppercase() || c[0].contains('(') {
                    if let Some(l) = AnswerLabel::from_letter(letter).and_then(|l| choice_in_range(l, kind)) {
                        return Some(l);
                    }
                }
            }
            trailing_paren_re()
                .captures(raw_text.trim_end())
                .and_then(|c| AnswerLabel::from_letter(c[1].chars().next().unwrap()))
                .and_then(|l| choice_in_range(l, kind))
        }
        TaskKind::FactCheck => last_fever_word(raw_text).map(AnswerLabel::Fever),
    }
}

/// Rejects generations without an extractable answer and refusals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityFilter {
    /// Case-insensitive substrings that mark a refusal.
    pub refusal_patterns: Vec<String>,
}

impl Default for ValidityFilter {
    fn default() -> Self {
        ValidityFilter {
            refusal_patterns: [
                "cannot assist",
                "can't assist",
                "as an ai",
                "i refuse",
                "i cannot help",
                "i can't help",
                "unable to comply",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl ValidityFilter {
    pub fn is_refusal(&self, raw_text: &str) -> bool {
        let lower = raw_text.to_lowercase();
        self.refusal_patterns.iter().any(|p| !p.is_empty() && lower.contains(&p.to_lowercase()))
    }

    pub fn validate(&self, raw_text: &str, kind: TaskKind, origin: ResponseOrigin) -> Response {
        let answer = parse_answer(raw_text, kind);
        let valid = answer.is_some() && !self.is_refusal(raw_text);
        Response {
            raw_text: raw_text.to_string(),
            answer: if valid { answer } else { None },
            rationale: strip_final_answer(raw_text),
            valid,
            origin,
        }
    }
}

/// Applies the default filter to an initial-step generation.
pub fn validate_response(raw_text: &str, kind: TaskKind) -> Response {
    ValidityFilter::default().validate(raw_text, kind, ResponseOrigin::Initial)
}

fn strip_final_answer(raw_text: &str) -> String {
    match finish_re().find_iter(raw_text).last() {
        Some(m) => {
            let mut s = String::with_capacity(raw_text.len());
            s.push_str(&raw_text[..m.start()]);
            s.push_str(&raw_text[m.end()..]);
            s.trim().to_string()
        }
        None => raw_text.trim().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MC4: TaskKind = TaskKind::MultipleChoice { num_choices: 4 };

    #[test]
    fn finish_marker_wins() {
        let text = "Thought: graph is connected, so the answer is A... Finish[B]";
        assert_eq!(parse_answer(text, MC4), Some(AnswerLabel::Choice(1)));
    }

    #[test]
    fn fever_label_word() {
        let got = parse_answer("The claim lacks sourcing. NOT ENOUGH INFO.", TaskKind::FactCheck);
        assert_eq!(got, Some(AnswerLabel::Fever(FeverLabel::NotEnoughInfo)));
        let got = parse_answer("At first it supports it, but on reflection: refutes", TaskKind::FactCheck);
        assert_eq!(got, Some(AnswerLabel::Fever(FeverLabel::Refutes)));
        let got = parse_answer("Finish[SUPPORTS]", TaskKind::FactCheck);
        assert_eq!(got, Some(AnswerLabel::Fever(FeverLabel::Supports)));
    }

    #[test]
    fn no_pattern_is_absent() {
        assert_eq!(parse_answer("I cannot assist with that request.", MC4), None);
        assert_eq!(parse_answer("The answer might be B or C.", MC4), None);
    }

    #[test]
    fn fallback_patterns() {
        assert_eq!(parse_answer("So the answer is C.", MC4), Some(AnswerLabel::Choice(2)));
        assert_eq!(parse_answer("so the answer is (d)", MC4), Some(AnswerLabel::Choice(3)));
        assert_eq!(parse_answer("Considering everything, (A)", MC4), Some(AnswerLabel::Choice(0)));
        // letter outside the label space
        assert_eq!(parse_answer("Finish[E]", MC4), None);
        assert_eq!(parse_answer("Finish[C. Paris]", MC4), Some(AnswerLabel::Choice(2)));
        assert_eq!(parse_answer("Finish[Both]", MC4), None);
    }

    #[test]
    fn validate_examples() {
        let r = validate_response("Thought: the third option fits. Finish[C]", MC4);
        assert!(r.valid);
        assert_eq!(r.answer, Some(AnswerLabel::Choice(2)));
        assert_eq!(r.rationale, "Thought: the third option fits.");

        let r = validate_response("I refuse to answer for moral considerations.", MC4);
        assert!(!r.valid);
        assert!(r.answer.is_none());

        let r = validate_response("The answer might be B or C.", MC4);
        assert!(!r.valid);

        // refusal with an answer marker is still rejected
        let r = validate_response("As an AI I should not, but Finish[A]", MC4);
        assert!(!r.valid);
    }

    #[test]
    fn answers_equal_examples() {
        assert!(answers_equal(&AnswerLabel::Choice(1), &AnswerLabel::Choice(1)));
        assert!(!answers_equal(&AnswerLabel::Choice(1), &AnswerLabel::Choice(3)));
        assert!(!answers_equal(&AnswerLabel::Fever(FeverLabel::Supports), &AnswerLabel::Fever(FeverLabel::Refutes)));
    }

    #[test]
    #[should_panic(expected = "mismatched task kinds")]
    fn answers_equal_rejects_mixed_kinds() {
        answers_equal(&AnswerLabel::Choice(0), &AnswerLabel::Fever(FeverLabel::Supports));
    }

    #[test]
    fn label_serialization_matches_dataset() {
        let nei = AnswerLabel::Fever(FeverLabel::NotEnoughInfo);
        assert_eq!(serde_json::to_string(&nei).unwrap(), "\"NOT ENOUGH INFO\"");
        assert_eq!(serde_json::to_string(&AnswerLabel::Choice(3)).unwrap(), "\"D\"");
        let back: AnswerLabel = serde_json::from_str("\"REFUTES\"").unwrap();
        assert_eq!(back, AnswerLabel::Fever(FeverLabel::Refutes));
    }

    #[test]
    fn question_invariants() {
        let q = Question::multiple_choice("q", "2+2?", vec!["3".into(), "4".into()], Some(AnswerLabel::Choice(1)));
        assert!(q.is_ok());
        let bad = Question::multiple_choice("q", "2+2?", vec!["3".into(), "4".into()], Some(AnswerLabel::Choice(2)));
        assert!(matches!(bad, Err(ModelError::InvalidGold { .. })));
        assert!(matches!(
            Question::multiple_choice("q", "x", vec!["only".into()], None),
            Err(ModelError::ChoiceCount(1))
        ));
        assert!(Direction::new("  ", DirectionSource::Generative).is_err());
    }

    proptest! {
        #[test]
        fn letter_roundtrip(n in 2usize..=MAX_CHOICES, i in 0usize..MAX_CHOICES) {
            prop_assume!(i < n);
            let kind = TaskKind::MultipleChoice { num_choices: n };
            let text = format!("Finish[{}]", AnswerLabel::letter(i));
            prop_assert_eq!(parse_answer(&text, kind), Some(AnswerLabel::Choice(i)));
        }

        #[test]
        fn filter_soundness(text in ".{0,80}", fc in any::<bool>()) {
            let kind = if fc { TaskKind::FactCheck } else { MC4 };
            let r = validate_response(&text, kind);
            if r.valid {
                prop_assert!(parse_answer(&text, kind).is_some());
                prop_assert!(r.answer.is_some());
            }
            // determinism
            prop_assert_eq!(parse_answer(&text, kind), parse_answer(&text, kind));
        }
    }
}
