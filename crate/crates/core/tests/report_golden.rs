use std::path::Path;

use cgfam::pipeline::{ClassCounts, EvaluationReport};

fn data(name: &str) -> String {
    std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/data")
            .join(name),
    )
    .unwrap()
}

fn nine_family_report() -> EvaluationReport {
    let counts: Vec<ClassCounts> = data("nine_family_counts.csv")
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            ClassCounts {
                class: f[0].into(),
                tp: f[1].parse().unwrap(),
                fp: f[2].parse().unwrap(),
                fn_: f[3].parse().unwrap(),
                tn: f[4].parse().unwrap(),
            }
        })
        .collect();
    EvaluationReport::from_counts(&counts).unwrap()
}

#[test]
fn table_matches_golden_file() {
    assert_eq!(
        nine_family_report().format_table(),
        data("nine_family_report.txt")
    );
}

#[test]
fn emitted_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let report = nine_family_report();
    cgfam::pipeline::emit_report(&report, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(EvaluationReport::from_json(&text).unwrap(), report);
    assert!(std::fs::read_to_string(dir.path().join("report.txt"))
        .unwrap()
        .contains("Obfuscator.ACY"));
}
