use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fewshot_core::report::EvalReport;
use fewshot_core::synthetic::{gaussian_clusters, ClusterSpec};
use fewshot_core::{load_store, save_store};

fn fewshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fewshot"))
        .args(args)
        .env("FEWSHOT_LOG", "error")
        .output()
        .expect("spawn fewshot")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn store(dir: &Path) -> PathBuf {
    let s = gaussian_clusters(&ClusterSpec {
        classes: 10,
        per_class: 12,
        dim: 4,
        ..ClusterSpec::default()
    })
    .unwrap();
    let p = dir.join("clusters.emb");
    save_store(&s, &p).unwrap();
    p
}

fn run_proto(dir: &Path, emb: &Path, out: &str, seeds: &str) -> Output {
    fewshot(&[
        "run",
        "--embeddings",
        emb.to_str().unwrap(),
        "--method",
        "proto",
        "--metric",
        "euclid",
        "--c-ways",
        "2..5",
        "--seeds",
        seeds,
        "--set",
        "eval-episodes=20",
        "--out",
        dir.join(out).to_str().unwrap(),
    ])
}

#[test]
fn ingest_hundred_lines_keeps_labels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.jsonl");
    let mut text = String::new();
    let mut labels = Vec::new();
    for i in 0..100 {
        let label = format!("l{}", i % 7);
        text.push_str(&format!(
            "{{\"text\": \"word{} shared\", \"label\": \"{label}\"}}\n",
            i % 13
        ));
        labels.push(label);
    }
    fs::write(&input, text).unwrap();
    let out = dir.path().join("d.emb");
    let o = fewshot(&[
        "ingest",
        "--input",
        input.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--encoder",
        "toy",
        "--toy-dim",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = load_store(&out).unwrap();
    assert_eq!(s.len(), 100);
    assert_eq!(s.dim(), 8);
    let mut got: Vec<String> = s.records().iter().map(|r| r.label.clone()).collect();
    got.sort();
    labels.sort();
    assert_eq!(got, labels);
}

#[test]
fn ingest_missing_label_is_a_data_error_at_that_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("d.jsonl");
    fs::write(
        &input,
        "{\"text\": \"a\", \"label\": \"x\"}\n{\"text\": \"b\", \"label\": \"y\"}\n{\"text\": \"c\"}\n",
    )
    .unwrap();
    let o = fewshot(&[
        "ingest",
        "--input",
        input.to_str().unwrap(),
        "--output",
        dir.path().join("o.emb").to_str().unwrap(),
        "--encoder",
        "toy",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("d.jsonl:3"), "{}", stderr(&o));
}

#[test]
fn induction_with_metric_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let emb = store(dir.path());
    let o = fewshot(&[
        "run",
        "--embeddings",
        emb.to_str().unwrap(),
        "--method",
        "induction",
        "--metric",
        "cosine",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("Induction takes a relation module, not a metric"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn unknown_flag_exits_one() {
    let o = fewshot(&["run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn proto_run_writes_four_rows_per_seed_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let emb = store(dir.path());
    let a = run_proto(dir.path(), &emb, "a", "1,2,3");
    assert!(a.status.success(), "{}", stderr(&a));
    let b = run_proto(dir.path(), &emb, "b", "1,2,3");
    assert!(b.status.success(), "{}", stderr(&b));
    let ca = fs::read(dir.path().join("a/results.csv")).unwrap();
    assert_eq!(ca, fs::read(dir.path().join("b/results.csv")).unwrap());
    let r = EvalReport::load(&dir.path().join("a/results.csv")).unwrap();
    assert_eq!(r.rows.len(), 12);
    assert!(String::from_utf8(ca)
        .unwrap()
        .starts_with("# fingerprint: dataset=clusters K=5 Q=5"));
    let table = String::from_utf8(a.stdout).unwrap();
    assert!(table.contains("Proto"), "{table}");
}

#[test]
fn jobs_do_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let emb = store(dir.path());
    let base = [
        "--embeddings",
        emb.to_str().unwrap(),
        "--seeds",
        "4",
        "--set",
        "eval-episodes=30",
    ];
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    let mut a = vec!["run", "--jobs", "1", "--out", one.to_str().unwrap()];
    a.extend(base);
    let mut b = vec!["run", "--jobs", "4", "--out", four.to_str().unwrap()];
    b.extend(base);
    assert!(fewshot(&a).status.success());
    assert!(fewshot(&b).status.success());
    assert_eq!(
        fs::read(one.join("results.csv")).unwrap(),
        fs::read(four.join("results.csv")).unwrap()
    );
}

#[test]
fn report_pools_seed_disjoint_runs() {
    let dir = tempfile::tempdir().unwrap();
    let emb = store(dir.path());
    assert!(run_proto(dir.path(), &emb, "s1", "1").status.success());
    assert!(run_proto(dir.path(), &emb, "s2", "2,3").status.success());
    let p1 = dir.path().join("s1/results.csv");
    let p2 = dir.path().join("s2/results.csv");
    let merged = dir.path().join("merged.csv");
    let o = fewshot(&[
        "report",
        p1.to_str().unwrap(),
        p2.to_str().unwrap(),
        "--merged",
        merged.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = EvalReport::load(&merged).unwrap();
    let r1 = EvalReport::load(&p1).unwrap();
    let r2 = EvalReport::load(&p2).unwrap();
    for s in m.summaries() {
        let vals: Vec<f64> = r1
            .rows
            .iter()
            .chain(&r2.rows)
            .filter(|r| r.ways == s.ways)
            .map(|r| r.accuracy)
            .collect();
        assert_eq!(vals.len(), 3);
        let pooled = vals.iter().sum::<f64>() / 3.0;
        assert!((s.mean - pooled).abs() < 1e-12);
    }
    assert!(String::from_utf8(o.stdout).unwrap().contains("C=5"));
}

#[test]
fn report_names_the_bad_file() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.csv");
    fs::write(&bad, "dataset,method\nx,proto\n").unwrap();
    let o = fewshot(&["report", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.csv"), "{}", stderr(&o));
}

#[test]
fn report_refuses_different_shots() {
    let dir = tempfile::tempdir().unwrap();
    let emb = store(dir.path());
    assert!(run_proto(dir.path(), &emb, "k5", "1").status.success());
    let o = fewshot(&[
        "run",
        "--embeddings",
        emb.to_str().unwrap(),
        "--k-shots",
        "1",
        "--seeds",
        "1",
        "--set",
        "eval-episodes=5",
        "--out",
        dir.path().join("k1").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = fewshot(&[
        "report",
        dir.path().join("k5/results.csv").to_str().unwrap(),
        dir.path().join("k1/results.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("K=1"), "{}", stderr(&o));
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("dim=2\n");
    for c in 0..6 {
        for i in 0..12 {
            let x = 1e200 * (1.0 + c as f64 + i as f64 / 10.0);
            text.push_str(&format!("c{c}-{i}\tc{c}\t{x} {}\n", -x));
        }
    }
    let emb = dir.path().join("huge.emb");
    fs::write(&emb, text).unwrap();
    let o = fewshot(&[
        "run",
        "--embeddings",
        emb.to_str().unwrap(),
        "--method",
        "relation-ntl",
        "--c-ways",
        "2",
        "--seeds",
        "1",
        "--set",
        "lr=0.5",
        "--set",
        "ntl-slices=3",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("lr 0.5"), "{}", stderr(&o));
}

#[test]
fn config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let emb = store(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "embeddings = {}\nmethod = matching\nc-ways = 2,3\nseeds = 1\neval-episodes = 5\nout = {}\n",
            emb.display(),
            dir.path().join("o").display()
        ),
    )
    .unwrap();
    let o = fewshot(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        "proto",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = EvalReport::load(&dir.path().join("o/results.csv")).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r
        .rows
        .iter()
        .all(|x| x.method == fewshot_core::Method::Proto));
}

#[test]
fn split_then_run_on_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let emb = store(dir.path());
    let sp = dir.path().join("split.tsv");
    let o = fewshot(&[
        "split",
        "--embeddings",
        emb.to_str().unwrap(),
        "--output",
        sp.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&sp).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("test\t")).count(), 5);
    let o = fewshot(&[
        "run",
        "--embeddings",
        emb.to_str().unwrap(),
        "--split-file",
        sp.to_str().unwrap(),
        "--seeds",
        "1",
        "--set",
        "eval-episodes=5",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}
