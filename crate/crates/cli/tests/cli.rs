use std::path::Path;
use std::process::{Command, Output};

fn cgfam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgfam"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

const SMALL: &str = r#"{
  "paths": { "corpus_dir": "corpus", "model_dir": "model", "report_dir": "report" },
  "autoencoder": { "epochs": 2, "learning_rate": 0.005, "embed_dim": 8, "hidden_dim": 12, "max_len": 40 },
  "clustering": { "k": 10, "iterations": 50 },
  "grid": { "c_values": [0.1, 1.0, 10.0] },
  "seed": 3
}"#;

#[test]
fn staged_commands_train_evaluate_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.json"), SMALL).unwrap();
    ok(cgfam(
        d,
        &[
            "synth-gen",
            "--out",
            "corpus",
            "--families",
            "3",
            "--samples",
            "10",
            "--seed",
            "2",
        ],
    ));
    let c = ["--config", "cfg.json"];
    for cmd in [
        "train-autoencoder",
        "embed",
        "cluster",
        "graph-features",
        "train-classifier",
    ] {
        ok(cgfam(d, &[&[cmd][..], &c[..]].concat()));
    }
    let table = ok(cgfam(d, &["evaluate", "--config", "cfg.json"]));
    assert!(
        table.contains("Precision") && table.contains("accuracy"),
        "{table}"
    );
    assert!(d.join("report/report.json").is_file());
    let again = ok(cgfam(d, &["report", "--config", "cfg.json"]));
    assert_eq!(table, again);

    let listing = std::fs::read_dir(d.join("corpus"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "asm"))
        .unwrap();
    std::fs::write(d.join("junk.asm"), "nothing here\n").unwrap();
    let out = ok(cgfam(
        d,
        &[
            "predict",
            "--model",
            "model",
            listing.to_str().unwrap(),
            "junk.asm",
        ],
    ));
    let lines: Vec<serde_json::Value> = out
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0]["predicted"].is_string());
    let total: f64 = lines[0]["probabilities"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(lines[1]["file_id"], "junk");
    assert!(lines[1]["error"].is_string());
}

#[test]
fn ingest_prints_function_records() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("a.asm"),
        ".text:00401000 start proc near\n.text:00401000 push ebp\n.text:00401001 call sub_401010\n.text:00401006 retn\n.text:00401006 start endp\n.text:00401010 sub_401010 proc near\n.text:00401010 mov eax, 1\n.text:00401015 retn\n.text:00401015 sub_401010 endp\n",
    )
    .unwrap();
    let out = ok(cgfam(d, &["ingest", "a.asm", "--graph", "g.json"]));
    assert_eq!(out.lines().count(), 2);
    assert!(out.contains(r#""callees":["sub_401010"]"#), "{out}");
    let g: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("g.json")).unwrap()).unwrap();
    assert_eq!(g["edges"].as_array().unwrap().len(), 1);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{ "sed": 1 }"#).unwrap();
    let o = cgfam(dir.path(), &["train", "--config", "bad.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sed"));
}

#[test]
fn missing_corpus_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgfam(dir.path(), &["train"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("corpus"));
    assert!(!dir.path().join("model").exists());
}
