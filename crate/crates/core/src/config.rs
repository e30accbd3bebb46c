//! Run configuration: a flat `key = value` file plus overrides.
//!
//! ```text
//! # proto on a frozen store
//! embeddings = data/liu.emb
//! method = proto
//! metric = euclidean
//! c-ways = 2..5
//! seeds = 1,2,3,4,5
//! ```
//!
//! Keys match the long command-line flags. Later assignments win, so
//! command-line overrides are applied after the file. Lists are comma
//! separated; integer lists also accept inclusive ranges (`2..5`).

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use sha2::{Digest, Sha256};

use crate::episodes::{SplitRatios, ARSC_THRESHOLDS};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, ShotMode};
use crate::heads::{HeadConfig, Method, RelationModule};
use crate::metric::{MetricKind, COSINE_SCALE};
use crate::train::{FinetuneConfig, LossKind, TrainConfig};

/// How document texts become vectors when no embedding store is given.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EncoderKind {
    /// Each JSONL record carries its own `vector`.
    #[default]
    Frozen,
    /// The trainable bag-of-words encoder.
    Toy,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(Self::Frozen),
            "toy" => Ok(Self::Toy),
            other => Err(Error::Config(format!(
                "unknown encoder `{other}` (frozen|toy)"
            ))),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Frozen => "frozen",
            Self::Toy => "toy",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToySettings {
    pub token_dim: usize,
    pub dim: usize,
}

impl Default for ToySettings {
    fn default() -> Self {
        Self {
            token_dim: 32,
            dim: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// JSON Lines dataset.
    pub dataset: Option<PathBuf>,
    /// Embedding store; takes precedence over encoding `dataset`.
    pub embeddings: Option<PathBuf>,
    /// Name used in reports; defaults to the input file stem.
    pub dataset_name: Option<String>,
    pub encoder: EncoderKind,
    pub toy: ToySettings,
    /// Method name as given; `relation` resolves through the module.
    pub method: String,
    pub metric: Option<MetricKind>,
    pub relation_module: Option<RelationModule>,
    pub cosine_scale: f64,
    pub ntl_slices: usize,
    pub relation_hidden: Option<usize>,
    pub routing_iters: usize,
    pub refine_passes: usize,
    pub shots: usize,
    pub queries: usize,
    /// Unlabeled items per episode for Proto++; `None` means 5 per class.
    pub unlabeled: Option<usize>,
    pub split: SplitRatios,
    pub split_file: Option<PathBuf>,
    /// Test categories of the binary review tasks. Non-empty switches the
    /// run to review-task mode; the remaining categories train.
    pub arsc_categories: Vec<String>,
    pub arsc_thresholds: Vec<u8>,
    /// Base seed for the class split and the ingestion encoder.
    pub seed: u64,
    pub train: TrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            embeddings: None,
            dataset_name: None,
            encoder: EncoderKind::Frozen,
            toy: ToySettings::default(),
            method: "proto".into(),
            metric: None,
            relation_module: None,
            cosine_scale: COSINE_SCALE,
            ntl_slices: 100,
            relation_hidden: None,
            routing_iters: 3,
            refine_passes: 1,
            shots: 5,
            queries: 5,
            unlabeled: None,
            split: SplitRatios {
                train: 0.5,
                valid: 0.0,
                test: 0.5,
            },
            split_file: None,
            arsc_categories: Vec::new(),
            arsc_thresholds: ARSC_THRESHOLDS.to_vec(),
            seed: 0,
            train: TrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `1,2,3` or `2..5` (inclusive), or a mix such as `1..3,7`.
pub fn parse_int_list(key: &str, v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (parse(key, a.trim())?, parse(key, b.trim())?);
                if a > b {
                    return Err(Error::Config(format!("`{key}`: empty range `{part}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse(key, part)?),
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("`{key}` needs at least one value")));
    }
    Ok(out)
}

fn optional<T: std::str::FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v == none {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Assigns one key. Keys accept `-` or `_` as separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let k = key.trim().replace('_', "-");
        match k.as_str() {
            "dataset" => self.dataset = Some(v.into()),
            "embeddings" => self.embeddings = Some(v.into()),
            "dataset-name" => self.dataset_name = Some(v.into()),
            "encoder" => self.encoder = v.parse()?,
            "toy-dim" => self.toy.dim = parse(&k, v)?,
            "toy-token-dim" => self.toy.token_dim = parse(&k, v)?,
            "method" => self.method = v.to_string(),
            "metric" => self.metric = if v == "n/a" { None } else { Some(v.parse()?) },
            "relation-module" => {
                self.relation_module = if v == "n/a" { None } else { Some(v.parse()?) }
            }
            "cosine-scale" => self.cosine_scale = parse(&k, v)?,
            "ntl-slices" => self.ntl_slices = parse(&k, v)?,
            "relation-hidden" => self.relation_hidden = optional(&k, v, "auto")?,
            "routing-iters" => self.routing_iters = parse(&k, v)?,
            "refine-passes" => self.refine_passes = parse(&k, v)?,
            "c-ways" => {
                self.eval.ways = parse_int_list(&k, v)?
                    .into_iter()
                    .map(|c| c as usize)
                    .collect()
            }
            "k-shots" => self.shots = parse(&k, v)?,
            "q-queries" => self.queries = parse(&k, v)?,
            "unlabeled" => self.unlabeled = optional(&k, v, "auto")?,
            "split" => self.split = v.parse()?,
            "split-file" => self.split_file = Some(v.into()),
            "arsc-categories" => self.arsc_categories = parse_list(&k, v)?,
            "arsc-thresholds" => self.arsc_thresholds = parse_list(&k, v)?,
            "seed" => self.seed = parse(&k, v)?,
            "train-episodes" => self.train.episodes = parse(&k, v)?,
            "lr" => self.train.lr = parse(&k, v)?,
            "loss" => self.train.loss = v.parse::<LossKind>()?,
            "optimizer" => self.train.optimizer = v.parse()?,
            "weight-decay" => self.train.weight_decay = parse(&k, v)?,
            "validate-every" => self.train.validate_every = parse(&k, v)?,
            "valid-episodes" => self.train.valid_episodes = parse(&k, v)?,
            "patience" => self.train.patience = optional(&k, v, "none")?,
            "train-ways" => self.train.ways = optional(&k, v, "auto")?,
            "finetune-iters" => self.finetune.iters = parse(&k, v)?,
            "finetune-lr" => self.finetune.lr = parse(&k, v)?,
            "finetune-optimizer" => self.finetune.optimizer = v.parse()?,
            "eval-episodes" => self.eval.episodes = parse(&k, v)?,
            "seeds" => self.eval.seeds = parse_int_list(&k, v)?,
            "shot-mode" => self.eval.shot_mode = v.parse::<ShotMode>()?,
            "jobs" => self.eval.jobs = parse(&k, v)?,
            "out" => self.out = v.into(),
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines. Blank lines and lines starting with
    /// `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`",
                    origin.display(),
                    i + 1
                ))
            })?;
            self.set(k, v).map_err(|e| {
                Error::Config(format!("{}:{}: {}", origin.display(), i + 1, strip(&e)))
            })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Every setting as `(key, value)` in a fixed order. Feeding these
    /// back through [`RunConfig::set`] reproduces the configuration.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut p: Vec<(&'static str, String)> = Vec::new();
        let path = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
        if let Some(d) = path(&self.dataset) {
            p.push(("dataset", d));
        }
        if let Some(e) = path(&self.embeddings) {
            p.push(("embeddings", e));
        }
        if let Some(n) = &self.dataset_name {
            p.push(("dataset-name", n.clone()));
        }
        p.push(("encoder", self.encoder.to_string()));
        p.push(("toy-dim", self.toy.dim.to_string()));
        p.push(("toy-token-dim", self.toy.token_dim.to_string()));
        p.push(("method", self.method.clone()));
        p.push((
            "metric",
            self.metric.map_or("n/a".into(), |m| m.to_string()),
        ));
        p.push((
            "relation-module",
            self.relation_module.map_or("n/a".into(), |m| m.to_string()),
        ));
        p.push(("cosine-scale", self.cosine_scale.to_string()));
        p.push(("ntl-slices", self.ntl_slices.to_string()));
        p.push((
            "relation-hidden",
            self.relation_hidden
                .map_or("auto".into(), |h| h.to_string()),
        ));
        p.push(("routing-iters", self.routing_iters.to_string()));
        p.push(("refine-passes", self.refine_passes.to_string()));
        p.push(("c-ways", join(&self.eval.ways)));
        p.push(("k-shots", self.shots.to_string()));
        p.push(("q-queries", self.queries.to_string()));
        p.push((
            "unlabeled",
            self.unlabeled.map_or("auto".into(), |u| u.to_string()),
        ));
        p.push((
            "split",
            format!(
                "{}/{}/{}",
                self.split.train, self.split.valid, self.split.test
            ),
        ));
        if let Some(s) = path(&self.split_file) {
            p.push(("split-file", s));
        }
        if !self.arsc_categories.is_empty() {
            p.push(("arsc-categories", self.arsc_categories.join(",")));
        }
        p.push(("arsc-thresholds", join(&self.arsc_thresholds)));
        p.push(("seed", self.seed.to_string()));
        p.push(("train-episodes", self.train.episodes.to_string()));
        p.push(("lr", self.train.lr.to_string()));
        p.push(("loss", self.train.loss.to_string()));
        p.push(("optimizer", self.train.optimizer.to_string()));
        p.push(("weight-decay", self.train.weight_decay.to_string()));
        p.push(("validate-every", self.train.validate_every.to_string()));
        p.push(("valid-episodes", self.train.valid_episodes.to_string()));
        p.push((
            "patience",
            self.train.patience.map_or("none".into(), |x| x.to_string()),
        ));
        p.push((
            "train-ways",
            self.train.ways.map_or("auto".into(), |x| x.to_string()),
        ));
        p.push(("finetune-iters", self.finetune.iters.to_string()));
        p.push(("finetune-lr", self.finetune.lr.to_string()));
        p.push(("finetune-optimizer", self.finetune.optimizer.to_string()));
        p.push(("eval-episodes", self.eval.episodes.to_string()));
        p.push(("seeds", join(&self.eval.seeds)));
        p.push(("shot-mode", self.eval.shot_mode.to_string()));
        p.push(("jobs", self.eval.jobs.to_string()));
        p.push(("out", self.out.display().to_string()));
        p
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Hash of every setting that can change results. The output
    /// directory and worker count are excluded.
    pub fn fingerprint_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            if k != "out" && k != "jobs" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Resolves the method name and its relation module.
    pub fn resolve_method(&self) -> Result<Method> {
        if self.method == "relation" {
            return Ok(match self.relation_module.unwrap_or(RelationModule::Base) {
                RelationModule::Base => Method::RelationBase,
                RelationModule::Ntl => Method::RelationNtl,
            });
        }
        self.method.parse()
    }

    /// The head configuration, enforcing the method/metric/module matrix.
    pub fn head_config(&self) -> Result<HeadConfig> {
        let m = self.resolve_method()?;
        match (m.relation_module(), self.metric, self.relation_module) {
            (Some(_), Some(_), _) => {
                return Err(Error::Config(format!(
                    "{} takes a relation module, not a metric",
                    m.label()
                )))
            }
            (None, Some(_), _) if !m.takes_metric() => {
                return Err(Error::Config(format!(
                    "{} takes neither a metric nor a relation module",
                    m.label()
                )))
            }
            (None, _, Some(_)) => {
                return Err(Error::Config(if m.takes_metric() {
                    format!("{} takes a metric, not a relation module", m.label())
                } else {
                    format!("{} takes neither a metric nor a relation module", m.label())
                }))
            }
            (Some(implied), _, Some(given)) if implied != given => {
                return Err(Error::Config(format!(
                    "{} uses the {implied} relation module, not {given}",
                    m.label()
                )))
            }
            _ => {}
        }
        let mut cfg = HeadConfig::new(m);
        if let Some(metric) = self.metric {
            cfg.metric = Some(metric);
        }
        cfg.cosine_scale = self.cosine_scale;
        cfg.ntl_slices = self.ntl_slices;
        cfg.relation_hidden = self.relation_hidden;
        cfg.routing_iters = self.routing_iters;
        cfg.refine_passes = self.refine_passes;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Unlabeled items per episode at `ways`.
    pub fn unlabeled_for(&self, method: Method, ways: usize) -> usize {
        match (method, self.unlabeled) {
            (Method::ProtoPlusPlus, Some(u)) => u,
            (Method::ProtoPlusPlus, None) => 5 * ways,
            (_, Some(u)) if u > 0 => {
                warn!(
                    "{} ignores unlabeled items; not sampling {u}",
                    method.label()
                );
                0
            }
            _ => 0,
        }
    }

    pub fn is_review_tasks(&self) -> bool {
        !self.arsc_categories.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.head_config()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.shots == 0 || self.queries == 0 {
            return Err(Error::Config(
                "k-shots and q-queries must be at least 1".into(),
            ));
        }
        if self.eval.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.finetune.lr <= 0.0 {
            return Err(Error::Config("finetune-lr must be positive".into()));
        }
        if self.embeddings.is_none() && self.dataset.is_none() {
            return Err(Error::Config("set `embeddings` or `dataset`".into()));
        }
        if self.encoder == EncoderKind::Toy && self.dataset.is_none() {
            return Err(Error::Config(
                "the toy encoder needs a `dataset` of texts".into(),
            ));
        }
        if self.encoder == EncoderKind::Toy && (self.toy.dim == 0 || self.toy.token_dim == 0) {
            return Err(Error::Config(
                "toy-dim and toy-token-dim must be positive".into(),
            ));
        }
        if self.is_review_tasks() {
            if self.dataset.is_none() {
                return Err(Error::Config(
                    "review tasks need a `dataset` with categories and stars".into(),
                ));
            }
            if self.eval.ways != [2] {
                return Err(Error::Config(format!(
                    "review tasks are binary; set c-ways = 2 (got {})",
                    join(&self.eval.ways)
                )));
            }
            if self.arsc_thresholds.is_empty() {
                return Err(Error::Config(
                    "arsc-thresholds needs at least one value".into(),
                ));
            }
            if let Some(t) = self
                .arsc_thresholds
                .iter()
                .find(|t| !ARSC_THRESHOLDS.contains(t))
            {
                return Err(Error::Config(format!(
                    "threshold {t} is not one of {ARSC_THRESHOLDS:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn dataset_label(&self) -> String {
        if let Some(n) = &self.dataset_name {
            return n.clone();
        }
        self.embeddings
            .as_ref()
            .or(self.dataset.as_ref())
            .and_then(|p| p.file_stem())
            .map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(pairs: &[(&str, &str)]) -> RunConfig {
        let mut c = RunConfig {
            embeddings: Some("x.emb".into()),
            ..RunConfig::default()
        };
        for (k, v) in pairs {
            c.set(k, v).unwrap();
        }
        c
    }

    #[test]
    fn induction_with_metric_is_rejected() {
        let err = with(&[("method", "induction"), ("metric", "cosine")])
            .validate()
            .unwrap_err();
        assert!(
            err.to_string()
                .contains("Induction takes a relation module, not a metric"),
            "{err}"
        );
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn method_matrix() {
        assert!(with(&[("method", "proto"), ("relation-module", "ntl")])
            .validate()
            .is_err());
        assert!(with(&[("method", "baseline"), ("metric", "cosine")])
            .validate()
            .is_err());
        assert!(
            with(&[("method", "induction"), ("relation-module", "base")])
                .validate()
                .is_err()
        );
        assert!(with(&[("method", "baselinepp"), ("metric", "euclid")])
            .validate()
            .is_ok());
        let c = with(&[("method", "relation"), ("relation-module", "ntl")]);
        assert_eq!(c.resolve_method().unwrap(), Method::RelationNtl);
        assert_eq!(
            with(&[("method", "matching")])
                .head_config()
                .unwrap()
                .metric,
            Some(MetricKind::Cosine)
        );
    }

    #[test]
    fn file_then_override() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\nmethod = matching\nc-ways = 2..4\nseeds=1,3\n\nk_shots = 2\n",
            Path::new("r.cfg"),
        )
        .unwrap();
        c.set("method", "proto").unwrap();
        assert_eq!(c.method, "proto");
        assert_eq!(c.eval.ways, vec![2, 3, 4]);
        assert_eq!(c.eval.seeds, vec![1, 3]);
        assert_eq!(c.shots, 2);
    }

    #[test]
    fn file_errors_name_the_line() {
        let mut c = RunConfig::default();
        let e = c
            .apply_text("method = proto\nbogus = 1\n", Path::new("r.cfg"))
            .unwrap_err();
        assert!(e.to_string().contains("r.cfg:2"), "{e}");
        let e = c
            .apply_text("just words\n", Path::new("r.cfg"))
            .unwrap_err();
        assert!(e.to_string().contains("r.cfg:1"), "{e}");
    }

    #[test]
    fn pairs_round_trip() {
        let c = with(&[
            ("method", "protopp"),
            ("metric", "cosine"),
            ("unlabeled", "7"),
            ("patience", "3"),
            ("arsc-categories", "books,dvd"),
            ("lr", "0.003"),
            ("split", "60/20/20"),
        ]);
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text(), Path::new("t")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint_hash(), c.fingerprint_hash());
    }

    #[test]
    fn hash_ignores_out_and_jobs_only() {
        let a = with(&[]);
        assert_eq!(
            a.fingerprint_hash(),
            with(&[("out", "elsewhere"), ("jobs", "8")]).fingerprint_hash()
        );
        assert_ne!(
            a.fingerprint_hash(),
            with(&[("k-shots", "1")]).fingerprint_hash()
        );
        assert_eq!(a.fingerprint_hash().len(), 16);
    }

    #[test]
    fn int_lists() {
        assert_eq!(parse_int_list("s", "1..3,7").unwrap(), vec![1, 2, 3, 7]);
        assert!(parse_int_list("s", "5..2").is_err());
        assert!(parse_int_list("s", "").is_err());
    }

    #[test]
    fn review_tasks_need_binary_ways() {
        let mut c = with(&[("arsc-categories", "books")]);
        c.dataset = Some("r.jsonl".into());
        assert!(c.validate().is_err());
        c.set("c-ways", "2").unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn default_unlabeled_only_for_protopp() {
        let c = RunConfig::default();
        assert_eq!(c.unlabeled_for(Method::ProtoPlusPlus, 3), 15);
        assert_eq!(c.unlabeled_for(Method::Proto, 3), 0);
    }
}
