//! MMLU and FEVER loaders, per-subject split sampling and statement
//! construction.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnswerLabel, DomainGroup, FeverLabel, Question};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("row {row}: expected 6 fields, found {found}")]
    WrongArity { row: usize, found: usize },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmluRecord {
    pub subject: String,
    pub question: String,
    pub choices: Vec<String>,
    pub answer_letter: char,
}

impl MmluRecord {
    pub fn gold_index(&self) -> usize {
        (self.answer_letter as u8 - b'A') as usize
    }

    pub fn to_question(&self, id: impl Into<String>) -> Question {
        Question::multiple_choice(
            id,
            self.question.clone(),
            self.choices.clone(),
            Some(AnswerLabel::Choice(self.gold_index())),
        )
        .expect("loader guarantees four choices and a valid letter")
        .with_subject(self.subject.clone(), Some(mmlu_domain(&self.subject)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeverRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub claim: String,
    pub label: FeverLabel,
}

impl FeverRecord {
    pub fn to_question(&self, id: impl Into<String>) -> Question {
        Question::fact_check(id, self.claim.clone(), Some(self.label)).expect("fact-check question is well formed")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub truth: bool,
    pub source_question_id: String,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Subject name from a file stem, dropping the `_test`/`_dev`/`_val` suffix
/// of the standard distribution.
pub fn subject_from_path(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in ["_test", "_dev", "_val"] {
        if let Some(s) = stem.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    stem
}

/// Reads every row, returning good records and positioned errors separately.
pub fn load_mmlu_csv_lenient(path: impl AsRef<Path>) -> Result<(Vec<MmluRecord>, Vec<DatasetError>), DatasetError> {
    let path = path.as_ref();
    let subject = subject_from_path(path);
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path).map_err(|e| io_error(path, e))?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(DatasetError::Parse { row: row_no, message: e.to_string() });
                continue;
            }
        };
        if row.len() != 6 {
            errors.push(DatasetError::WrongArity { row: row_no, found: row.len() });
            continue;
        }
        let letter = row[5].trim();
        let answer_letter = match letter.chars().collect::<Vec<_>>()[..] {
            [c @ 'A'..='D'] => c,
            _ => {
                errors
                    .push(DatasetError::Parse { row: row_no, message: format!("answer {letter:?} is not one of A-D") });
                continue;
            }
        };
        records.push(MmluRecord {
            subject: subject.clone(),
            question: row[0].to_string(),
            choices: (1..5).map(|c| row[c].to_string()).collect(),
            answer_letter,
        });
    }
    Ok((records, errors))
}

/// Headerless six-column CSV: question, four choices, answer letter.
pub fn load_mmlu_csv(path: impl AsRef<Path>) -> Result<Vec<MmluRecord>, DatasetError> {
    let (records, errors) = load_mmlu_csv_lenient(path)?;
    match errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

fn parse_fever_line(line_no: usize, line: &str) -> Result<FeverRecord, DatasetError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| DatasetError::Parse { row: line_no, message: e.to_string() })?;
    let field = |name: &str| {
        value
            .get(name)
            .and_then(|v| v.as_str())
            .ok_or_else(|| DatasetError::Parse { row: line_no, message: format!("missing string field {name:?}") })
    };
    let claim = field("claim")?.to_string();
    let label_text = field("label")?;
    let label = FeverLabel::parse(label_text)
        .ok_or_else(|| DatasetError::UnknownLabel { line: line_no, label: label_text.to_string() })?;
    let id = match value.get("id") {
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(serde_json::Value::Number(n)) => Some(n.to_string()),
        _ => None,
    };
    Ok(FeverRecord { id, claim, label })
}

pub fn load_fever_jsonl_lenient(path: impl AsRef<Path>) -> Result<(Vec<FeverRecord>, Vec<DatasetError>), DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_fever_line(i + 1, line) {
            Ok(r) => records.push(r),
            Err(e) => errors.push(e),
        }
    }
    Ok((records, errors))
}

/// One JSON object per line with at least `claim` and `label`. Blank lines
/// are skipped.
pub fn load_fever_jsonl(path: impl AsRef<Path>) -> Result<Vec<FeverRecord>, DatasetError> {
    let (records, errors) = load_fever_jsonl_lenient(path)?;
    match errors.into_iter().next() {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

const BLANK: &str = "___";

fn complete(question: &str, choice: &str) -> String {
    if question.contains(BLANK) {
        question.replacen(BLANK, choice, 1)
    } else {
        format!("{question} {choice}")
    }
}

/// A true statement built from the gold choice and a false one from a
/// uniformly drawn incorrect choice.
pub fn build_statements<R: Rng + ?Sized>(
    record: &MmluRecord,
    question_id: &str,
    rng: &mut R,
) -> (Statement, Statement) {
    let gold = record.gold_index();
    let wrong = (0..record.choices.len()).filter(|&i| i != gold).choose(rng).expect("at least two choices");
    let make = |idx: usize, truth: bool| Statement {
        text: complete(&record.question, &record.choices[idx]),
        truth,
        source_question_id: question_id.to_string(),
    };
    (make(gold, true), make(wrong, false))
}

/// Seeded sample of up to `per_subject` items per subject. Both halves keep
/// input order.
pub fn sample_split<T: Clone>(
    items: &[T],
    subject: impl Fn(&T) -> String,
    per_subject: usize,
    seed: u64,
) -> (Vec<T>, Vec<T>) {
    assert!(per_subject >= 1, "per_subject must be at least 1");
    let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_subject.entry(subject(item)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; items.len()];
    for indices in by_subject.values() {
        for &i in indices.choose_multiple(&mut rng, per_subject.min(indices.len())) {
            chosen[i] = true;
        }
    }
    let mut eval = Vec::new();
    let mut rest = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if chosen[i] {
            eval.push(item.clone());
        } else {
            rest.push(item.clone());
        }
    }
    (eval, rest)
}

pub fn write_split_manifest(ids: &[String], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(ids).map_err(|e| io_error(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

pub fn read_split_manifest(path: impl AsRef<Path>) -> Result<Vec<String>, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_error(path, e))
}

/// Coarse MMLU category of a subject; unknown subjects map to `Other`.
pub fn mmlu_domain(subject: &str) -> DomainGroup {
    const STEM: &[&str] = &[
        "abstract_algebra",
        "astronomy",
        "college_biology",
        "college_chemistry",
        "college_computer_science",
        "college_mathematics",
        "college_physics",
        "computer_security",
        "conceptual_physics",
        "electrical_engineering",
        "elementary_mathematics",
        "high_school_biology",
        "high_school_chemistry",
        "high_school_computer_science",
        "high_school_mathematics",
        "high_school_physics",
        "high_school_statistics",
        "machine_learning",
    ];
    const HUMANITY: &[&str] = &[
        "formal_logic",
        "high_school_european_history",
        "high_school_us_history",
        "high_school_world_history",
        "international_law",
        "jurisprudence",
        "logical_fallacies",
        "moral_disputes",
        "moral_scenarios",
        "philosophy",
        "prehistory",
        "professional_law",
        "world_religions",
    ];
    const SOCIAL: &[&str] = &[
        "econometrics",
        "high_school_geography",
        "high_school_government_and_politics",
        "high_school_macroeconomics",
        "high_school_microeconomics",
        "high_school_psychology",
        "human_sexuality",
        "professional_psychology",
        "public_relations",
        "security_studies",
        "sociology",
        "us_foreign_policy",
    ];
    if STEM.contains(&subject) {
        DomainGroup::Stem
    } else if HUMANITY.contains(&subject) {
        DomainGroup::Humanity
    } else if SOCIAL.contains(&subject) {
        DomainGroup::Social
    } else {
        DomainGroup::Other
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn mmlu_row_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "elementary_mathematics_test.csv",
            "What is 2+2?,3,4,5,6,B\n\"Pick one, please\",a,\"b, c\",d,e,D\n",
        );
        let recs = load_mmlu_csv(&p).unwrap();
        assert_eq!(recs[0].subject, "elementary_mathematics");
        assert_eq!(recs[0].to_question("m0").gold, Some(AnswerLabel::Choice(1)));
        assert_eq!(recs[1].question, "Pick one, please");
        assert_eq!(recs[1].choices[1], "b, c");
        assert_eq!(recs[0].to_question("m0").domain_group, Some(DomainGroup::Stem));
    }

    #[test]
    fn mmlu_errors_are_positioned() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.csv", "q,a,b,c,d,A\nq,a,b,c,B\nq,a,b,c,d,E\n");
        assert_eq!(load_mmlu_csv(&p), Err(DatasetError::WrongArity { row: 2, found: 5 }));
        let (recs, errs) = load_mmlu_csv_lenient(&p).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(matches!(errs[1], DatasetError::Parse { row: 3, .. }));
    }

    #[test]
    fn fever_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "f.jsonl",
            "{\"claim\":\"X was born in 1990.\",\"label\":\"REFUTES\"}\n\n{\"id\":7,\"claim\":\"Y\",\"label\":\"NOT ENOUGH INFO\"}\n",
        );
        let recs = load_fever_jsonl(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].label, FeverLabel::Refutes);
        assert_eq!(recs[1].id.as_deref(), Some("7"));
        let bad = write(&dir, "g.jsonl", "{\"claim\":\"Z\",\"label\":\"SUPPORTED\"}\n");
        assert_eq!(load_fever_jsonl(&bad), Err(DatasetError::UnknownLabel { line: 1, label: "SUPPORTED".into() }));
    }

    fn record(q: &str) -> MmluRecord {
        MmluRecord {
            subject: "geo".into(),
            question: q.into(),
            choices: vec!["Paris".into(), "Rome".into(), "Madrid".into(), "Berlin".into()],
            answer_letter: 'A',
        }
    }

    #[test]
    fn statements_substitute_blank() {
        let r = record("The capital of France is ___.");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (pos, neg) = build_statements(&r, "q1", &mut rng);
        assert_eq!(pos.text, "The capital of France is Paris.");
        assert!(pos.truth && !neg.truth);
        assert_ne!(neg.text, pos.text);
        let mut again = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(build_statements(&r, "q1", &mut again).1, neg);
        let (pos, _) = build_statements(&record("Capital of France:"), "q2", &mut rng);
        assert_eq!(pos.text, "Capital of France: Paris");
    }

    #[test]
    fn split_clamps_and_partitions() {
        let items: Vec<(String, usize)> =
            (0..120).map(|i| ("a".to_string(), i)).chain((0..30).map(|i| ("b".to_string(), i))).collect();
        let (eval, rest) = sample_split(&items, |x| x.0.clone(), 50, 9);
        assert_eq!(eval.iter().filter(|x| x.0 == "a").count(), 50);
        assert_eq!(eval.iter().filter(|x| x.0 == "b").count(), 30);
        assert_eq!(rest.len(), 70);
        assert_eq!(sample_split(&items, |x| x.0.clone(), 50, 9), (eval, rest));
    }
}
