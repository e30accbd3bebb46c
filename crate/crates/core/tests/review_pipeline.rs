use std::fmt::Write as _;
use std::fs;

use fewshot_core::pipeline::cmd_run;
use fewshot_core::{Method, RunConfig};

fn reviews(dir: &std::path::Path) -> std::path::PathBuf {
    let words = ["awful", "poor", "fine", "good", "great"];
    let mut text = String::new();
    for cat in ["books", "dvd", "kitchen", "toys"] {
        for stars in 1..=5u8 {
            for i in 0..12 {
                let w = words[stars as usize - 1];
                writeln!(
                    text,
                    "{{\"text\": \"{w} {w} {cat} item{i}\", \"label\": \"{cat}\", \"category\": \"{cat}\", \"stars\": {stars}}}"
                )
                .unwrap();
            }
        }
    }
    let p = dir.join("reviews.jsonl");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn review_tasks_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        dataset: Some(reviews(dir.path())),
        out: dir.path().join("out"),
        ..RunConfig::default()
    };
    for (k, v) in [
        ("encoder", "toy"),
        ("method", "proto"),
        ("metric", "cosine"),
        ("c-ways", "2"),
        ("seeds", "1,2"),
        ("arsc-categories", "books,dvd"),
        ("train-episodes", "20"),
        ("eval-episodes", "10"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let out = cmd_run(&cfg).unwrap();
    let mut datasets: Vec<&str> = out.report.rows.iter().map(|r| r.dataset.as_str()).collect();
    datasets.sort();
    datasets.dedup();
    assert_eq!(datasets.len(), 6, "{datasets:?}");
    assert!(datasets
        .iter()
        .all(|d| d.contains("books") || d.contains("dvd")));
    assert_eq!(out.report.rows.len(), 12);
    assert!(out
        .report
        .rows
        .iter()
        .all(|r| r.method == Method::Proto && r.ways == 2));
    assert!(out
        .report
        .rows
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.accuracy)));
    assert!(out.dir.join("results.csv").exists());
}

#[test]
fn review_tasks_require_binary_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        dataset: Some(reviews(dir.path())),
        out: dir.path().join("out"),
        ..RunConfig::default()
    };
    cfg.set("encoder", "toy").unwrap();
    cfg.set("arsc-categories", "books").unwrap();
    cfg.set("c-ways", "2,3").unwrap();
    let e = cmd_run(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 1);
}
