use std::fs;

use mirror_core::datasets::DatasetError;
use mirror_core::model::DomainGroup;
use mirror_core::runner::{load_questions, DatasetConfig, RunConfig, RunError};

fn mmlu_config(dir: &std::path::Path, extra: &str) -> RunConfig {
    let text = format!(
        r#"
output_dir = "out"

[dataset]
kind = "mmlu"
path = "{}"
{extra}

[gateway]
backend = "replay"
store_path = "store.jsonl"
"#,
        dir.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

fn write_subjects(dir: &std::path::Path) {
    let rows = |stem: &str| -> String {
        (0..6)
            .map(|i| format!("\"{stem} question {i}, with a comma\",w,x,y,z,{}\n", ["A", "B", "C", "D"][i % 4]))
            .collect()
    };
    fs::write(dir.join("astronomy_test.csv"), rows("astronomy")).unwrap();
    fs::write(dir.join("philosophy_test.csv"), rows("philosophy")).unwrap();
    fs::write(dir.join("notes.txt"), "ignored").unwrap();
}

#[test]
fn mmlu_directory_loads_every_subject() {
    let dir = tempfile::tempdir().unwrap();
    write_subjects(dir.path());
    let (questions, synthetic) = load_questions(&mmlu_config(dir.path(), "")).unwrap();
    assert!(synthetic.is_none());
    assert_eq!(questions.len(), 12);
    assert_eq!(questions[0].id, "astronomy-0000");
    assert_eq!(questions[6].id, "philosophy-0000");
    assert_eq!(questions[0].subject.as_deref(), Some("astronomy"));
    assert!(questions[0].prompt_text.contains("astronomy question 0, with a comma"));
}

#[test]
fn domain_filter_and_split() {
    let dir = tempfile::tempdir().unwrap();
    write_subjects(dir.path());
    let config = mmlu_config(dir.path(), "domains = [\"STEM\"]");
    assert!(matches!(&config.dataset, DatasetConfig::Mmlu { domains, .. } if domains == &[DomainGroup::Stem]));
    let (questions, _) = load_questions(&config).unwrap();
    assert_eq!(questions.len(), 6);
    assert!(questions.iter().all(|q| q.domain_group == Some(DomainGroup::Stem)));

    let (split, _) = load_questions(&mmlu_config(dir.path(), "per_subject = 2")).unwrap();
    assert_eq!(split.len(), 4);
    let (again, _) = load_questions(&mmlu_config(dir.path(), "per_subject = 2")).unwrap();
    assert_eq!(split, again);
}

#[test]
fn malformed_rows_are_positioned() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("law_test.csv"), "q,a,b,c,d,A\nq,a,b,c,A\n").unwrap();
    match load_questions(&mmlu_config(dir.path(), "")) {
        Err(RunError::Dataset(DatasetError::WrongArity { row: 2, found: 5 })) => {}
        Err(other) => panic!("{other}"),
        Ok(_) => panic!("malformed row accepted"),
    }
}
