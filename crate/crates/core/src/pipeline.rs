//! The commands behind the `fewshot` binary.
//!
//! Seeds used per run seed `s`: head initialisation from `derive(s, 1)`,
//! the toy encoder from `derive(s, 2)`; training and evaluation derive
//! their own streams from `s`. The class split and ingestion use the
//! configuration's base `seed`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::config::{EncoderKind, RunConfig, ToySettings};
use crate::data::{read_jsonl, Document};
use crate::embedding::{load_store, save_store, EmbeddingRecord, EmbeddingStore, ToyEncoder};
use crate::episodes::{build_arsc_tasks, split_classes, ClassPool, ClassSplit, EpisodeSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, Model};
use crate::heads::{Head, HeadConfig};
use crate::provider::Provider;
use crate::report::{merge, render_table, EvalReport, Fingerprint, ResultRow};
use crate::rng;
use crate::train::train_head;

const INIT_STREAM: u64 = 1;
const ENCODER_STREAM: u64 = 2;

pub const RESULTS_FILE: &str = "results.csv";
pub const TABLE_FILE: &str = "table.txt";
pub const CONFIG_FILE: &str = "config.txt";

pub fn toy_encoder(docs: &[Document], toy: ToySettings, seed: u64) -> Result<ToyEncoder> {
    let mut r = rng::seeded(rng::derive(seed, ENCODER_STREAM));
    ToyEncoder::new(
        docs.iter().map(|d| d.text.as_str()),
        toy.token_dim,
        toy.dim,
        &mut r,
    )
}

/// Vectors for `docs`: their own `vector` fields, or a toy encoding.
pub fn documents_to_store(
    docs: &[Document],
    origin: &Path,
    encoder: EncoderKind,
    toy: ToySettings,
    seed: u64,
) -> Result<EmbeddingStore> {
    let Some(first) = docs.first() else {
        return Err(Error::Format {
            path: origin.to_path_buf(),
            line: 1,
            msg: "no records".into(),
        });
    };
    let bad = |d: &Document, msg: String| Error::Format {
        path: origin.to_path_buf(),
        line: d.line,
        msg,
    };
    match encoder {
        EncoderKind::Frozen => {
            let dim = first
                .vector
                .as_ref()
                .ok_or_else(|| {
                    bad(
                        first,
                        "missing `vector` (needed by the frozen encoder)".into(),
                    )
                })?
                .len();
            let mut store = EmbeddingStore::new(dim)?;
            for d in docs {
                let v = d.vector.as_ref().ok_or_else(|| {
                    bad(d, "missing `vector` (needed by the frozen encoder)".into())
                })?;
                if v.len() != dim {
                    return Err(bad(
                        d,
                        format!("`vector` has {} values, expected {dim}", v.len()),
                    ));
                }
                store.push(EmbeddingRecord {
                    id: d.id.clone(),
                    label: d.label.clone(),
                    vector: v.clone(),
                })?;
            }
            Ok(store)
        }
        EncoderKind::Toy => {
            let enc = toy_encoder(docs, toy, seed)?;
            let mut store = EmbeddingStore::new(enc.dim())?;
            for d in docs {
                store.push(EmbeddingRecord {
                    id: d.id.clone(),
                    label: d.label.clone(),
                    vector: enc.encode(&d.text)?.data().to_vec(),
                })?;
            }
            Ok(store)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IngestSummary {
    pub records: usize,
    pub dim: usize,
    pub labels: usize,
}

/// JSONL in, embedding store out.
pub fn cmd_ingest(
    input: &Path,
    output: &Path,
    encoder: EncoderKind,
    toy: ToySettings,
    seed: u64,
) -> Result<IngestSummary> {
    let docs = read_jsonl(input)?;
    let store = documents_to_store(&docs, input, encoder, toy, seed)?;
    save_store(&store, output)?;
    let summary = IngestSummary {
        records: store.len(),
        dim: store.dim(),
        labels: store.labels().len(),
    };
    info!(
        "wrote {} records ({} labels, d={}) to {}",
        summary.records,
        summary.labels,
        summary.dim,
        output.display()
    );
    Ok(summary)
}

/// Split file: one `<partition>\t<class>` line per class.
pub fn write_split(split: &ClassSplit, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (name, part) in [
        ("train", &split.train),
        ("valid", &split.valid),
        ("test", &split.test),
    ] {
        for c in part {
            out.push_str(&format!("{name}\t{c}\n"));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<ClassSplit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut split = ClassSplit::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (part, class) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected `<partition>\\t<class>`".into()))?;
        match part {
            "train" => split.train.push(class.to_string()),
            "valid" => split.valid.push(class.to_string()),
            "test" => split.test.push(class.to_string()),
            other => return Err(bad(format!("unknown partition `{other}`"))),
        }
    }
    for p in [&mut split.train, &mut split.valid, &mut split.test] {
        p.sort();
    }
    split.check_disjoint()?;
    Ok(split)
}

/// Inputs loaded once per run: the document list (when a dataset is
/// given) and the frozen store aligned with it.
struct Inputs {
    docs: Option<Vec<Document>>,
    store: Option<EmbeddingStore>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let docs = match &cfg.dataset {
        Some(p) if cfg.is_review_tasks() || cfg.embeddings.is_none() => {
            let d = read_jsonl(p)?;
            if d.is_empty() {
                return Err(Error::Format {
                    path: p.clone(),
                    line: 1,
                    msg: "no records".into(),
                });
            }
            Some(d)
        }
        _ => None,
    };
    let store = match (&cfg.embeddings, &docs) {
        (Some(p), Some(docs)) => {
            let full = load_store(p)?;
            let mut aligned = EmbeddingStore::new(full.dim())?;
            for d in docs {
                let i = full.index_of(&d.id).ok_or_else(|| {
                    Error::Sampling(format!(
                        "document `{}` has no embedding in {}",
                        d.id,
                        p.display()
                    ))
                })?;
                aligned.push(EmbeddingRecord {
                    id: d.id.clone(),
                    label: d.label.clone(),
                    vector: full.get(i).vector.clone(),
                })?;
            }
            Some(aligned)
        }
        (Some(p), None) => Some(load_store(p)?),
        (None, Some(docs)) if cfg.encoder == EncoderKind::Frozen => Some(documents_to_store(
            docs,
            cfg.dataset.as_deref().unwrap_or(Path::new("")),
            EncoderKind::Frozen,
            cfg.toy,
            cfg.seed,
        )?),
        _ => None,
    };
    Ok(Inputs { docs, store })
}

fn provider_for(inputs: &Inputs, cfg: &RunConfig, seed: u64) -> Result<Provider> {
    match (&inputs.store, &inputs.docs) {
        (Some(s), _) => Ok(Provider::Frozen(s.clone())),
        (None, Some(docs)) => Ok(Provider::Toy {
            encoder: toy_encoder(docs, cfg.toy, seed)?,
            docs: docs.clone(),
        }),
        (None, None) => Err(Error::Config("set `embeddings` or `dataset`".into())),
    }
}

fn labels_pool(inputs: &Inputs) -> ClassPool {
    match (&inputs.store, &inputs.docs) {
        (Some(s), _) => ClassPool::from_store(s),
        (None, Some(d)) => ClassPool::from_labels(d.iter().map(|d| d.label.as_str())),
        (None, None) => ClassPool::new(BTreeMap::new()),
    }
}

fn max_ways(cfg: &RunConfig) -> usize {
    cfg.eval.ways.iter().copied().max().unwrap_or(2)
}

fn compute_split(cfg: &RunConfig, pool: &ClassPool) -> Result<ClassSplit> {
    split_classes(
        &pool.sizes(),
        cfg.split,
        cfg.shots + cfg.queries,
        max_ways(cfg),
        cfg.seed,
    )
}

/// Splits the classes of the configured input and writes the split file.
pub fn cmd_split(cfg: &RunConfig, output: &Path) -> Result<ClassSplit> {
    let inputs = load_inputs(cfg)?;
    let split = compute_split(cfg, &labels_pool(&inputs))?;
    write_split(&split, output)?;
    info!(
        "split {} train / {} valid / {} test classes into {}",
        split.train.len(),
        split.valid.len(),
        split.test.len(),
        output.display()
    );
    Ok(split)
}

/// Class pools of one run, indexed against the provider's items.
struct Layout {
    train: Vec<ClassPool>,
    train_classes: Vec<String>,
    valid: Option<ClassPool>,
    /// `(dataset name, pool)` per evaluation target.
    tests: Vec<(String, ClassPool)>,
}

fn plain_layout(cfg: &RunConfig, inputs: &Inputs) -> Result<Layout> {
    let pool = labels_pool(inputs);
    let split = match &cfg.split_file {
        Some(p) => read_split(p)?,
        None => compute_split(cfg, &pool)?,
    };
    split.check_disjoint()?;
    let train = pool.restrict(&split.train)?;
    let valid = if split.valid.is_empty() {
        None
    } else {
        Some(pool.restrict(&split.valid)?)
    };
    Ok(Layout {
        train: if train.is_empty() {
            Vec::new()
        } else {
            vec![train]
        },
        train_classes: split.train.clone(),
        valid,
        tests: vec![(cfg.dataset_label(), pool.restrict(&split.test)?)],
    })
}

fn review_layout(cfg: &RunConfig, docs: &[Document]) -> Result<Layout> {
    let need = cfg.shots + cfg.queries;
    let test_cats: BTreeSet<&str> = cfg.arsc_categories.iter().map(String::as_str).collect();
    let train_cats: Vec<String> = docs
        .iter()
        .filter_map(|d| d.category.as_deref())
        .filter(|c| !test_cats.contains(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_string)
        .collect();
    let pools = |cats: &[String]| -> Result<Vec<(String, ClassPool)>> {
        let mut out = Vec::new();
        for task in build_arsc_tasks(docs, cats, &cfg.arsc_thresholds)? {
            let name = task.spec.name();
            let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (&d, label) in task.docs.iter().zip(&task.labels) {
                classes
                    .entry(format!("{name}:{label}"))
                    .or_default()
                    .push(d);
            }
            let small: Vec<String> = classes
                .iter()
                .filter(|(_, m)| m.len() < need)
                .map(|(c, m)| format!("{c} ({})", m.len()))
                .collect();
            if classes.len() < 2 || !small.is_empty() {
                warn!("dropping task {name}: needs two labels with at least {need} reviews each, has {small:?}");
                continue;
            }
            out.push((name, ClassPool::new(classes)));
        }
        Ok(out)
    };
    let tests = pools(&cfg.arsc_categories)?;
    if tests.is_empty() {
        return Err(Error::Config(
            "no review task has enough samples to evaluate".into(),
        ));
    }
    let train = pools(&train_cats)?;
    let train_classes = train
        .iter()
        .flat_map(|(_, p)| p.class_names().into_iter().cloned())
        .collect();
    let label = cfg.dataset_label();
    Ok(Layout {
        train: train.into_iter().map(|(_, p)| p).collect(),
        train_classes,
        valid: None,
        tests: tests
            .into_iter()
            .map(|(n, p)| (format!("{label}:{n}"), p))
            .collect(),
    })
}

/// Output of [`cmd_run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: EvalReport,
    pub table: String,
    pub dir: PathBuf,
}

fn train_then_eval(
    cfg: &RunConfig,
    head_cfg: &HeadConfig,
    inputs: &Inputs,
    layout: &Layout,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let method = head_cfg.method;
    let mut provider = provider_for(inputs, cfg, seed)?;
    let mut head = Head::new(
        head_cfg.clone(),
        provider.dim(),
        &mut rng::seeded(rng::derive(seed, INIT_STREAM)),
    )?;
    if head.is_parametric() || provider.is_trainable() {
        let ways = cfg.train.ways.unwrap_or_else(|| {
            let fewest = layout.train.iter().map(ClassPool::len).min().unwrap_or(0);
            max_ways(cfg).min(fewest)
        });
        if ways < 2 || layout.train.iter().any(|p| p.len() < ways) {
            return Err(Error::Config(format!(
                "training {} needs at least {} classes in every training pool",
                method.label(),
                ways.max(2)
            )));
        }
        if let Some(v) = &layout.valid {
            if v.len() < ways {
                return Err(Error::Config(format!(
                    "validation partition has {} classes, training episodes are {ways}-way",
                    v.len()
                )));
            }
        }
        let spec = EpisodeSpec::new(ways, cfg.shots, cfg.queries)
            .with_unlabeled(cfg.unlabeled_for(method, ways));
        let report = train_head(
            &mut head,
            &mut provider,
            &layout.train,
            layout.valid.as_ref(),
            &spec,
            &cfg.train,
            &cfg.finetune,
            seed,
        )?;
        if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
            info!(
                "seed {seed}: trained {} episodes, loss {first:.4} -> {last:.4}",
                report.losses.len()
            );
        }
    }
    let model = Model {
        head,
        finetune: cfg.finetune.clone(),
    };
    let mut rows = Vec::new();
    for (dataset, pool) in &layout.tests {
        for &ways in &cfg.eval.ways {
            let spec = EpisodeSpec::new(ways, cfg.shots, cfg.queries)
                .with_unlabeled(cfg.unlabeled_for(method, ways));
            let ecfg = EvalConfig {
                ways: vec![ways],
                ..cfg.eval.clone()
            };
            for r in evaluate(
                &model,
                &provider,
                &layout.train_classes,
                pool,
                &spec,
                &ecfg,
                seed,
            )? {
                info!(
                    "{dataset} seed {seed} C={ways}: accuracy {:.4}",
                    r.tally.accuracy()
                );
                rows.push(ResultRow {
                    dataset: dataset.clone(),
                    method,
                    metric: head_cfg.metric,
                    relation_module: method.relation_module(),
                    ways,
                    shots: cfg.shots,
                    queries: cfg.queries,
                    seed,
                    accuracy: r.tally.accuracy(),
                });
            }
        }
    }
    Ok(rows)
}

/// Trains (when applicable) and evaluates every seed and C, then writes
/// `results.csv`, `table.txt` and `config.txt` into the output directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let head_cfg = cfg.head_config()?;
    let inputs = load_inputs(cfg)?;
    let layout = match (&inputs.docs, cfg.is_review_tasks()) {
        (Some(docs), true) => review_layout(cfg, docs)?,
        _ => plain_layout(cfg, &inputs)?,
    };
    let mut rows = Vec::new();
    for &seed in &cfg.eval.seeds {
        rows.extend(train_then_eval(cfg, &head_cfg, &inputs, &layout, seed)?);
    }
    let report = EvalReport {
        fingerprint: Fingerprint {
            dataset: cfg.dataset_label(),
            shots: cfg.shots,
            queries: cfg.queries,
            episodes: cfg.eval.episodes,
            shot_mode: cfg.eval.shot_mode.to_string(),
            config: cfg.fingerprint_hash(),
        },
        rows,
    };
    let table = render_table(&report);
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    report.save(&cfg.out.join(RESULTS_FILE))?;
    let write = |name: &str, text: &str| {
        let p = cfg.out.join(name);
        fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write(TABLE_FILE, &table)?;
    write(CONFIG_FILE, &cfg.to_text())?;
    Ok(RunOutput {
        report,
        table,
        dir: cfg.out.clone(),
    })
}

/// Merges result files and renders the comparison table.
pub fn cmd_report(paths: &[PathBuf]) -> Result<(EvalReport, String)> {
    let reports = paths
        .iter()
        .map(|p| Ok((p.clone(), EvalReport::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let merged = merge(&reports)?;
    let table = render_table(&merged);
    Ok((merged, table))
}
